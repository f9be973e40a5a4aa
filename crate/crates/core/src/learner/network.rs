//! Small dense networks with hand-written backpropagation.
//!
//! Parameters of a network live in one flat `Vec<f64>`; each layer knows its
//! offset. Hidden layers use `tanh`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl Dense {
    pub fn n_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.inputs * self.outputs
    }

    /// `W x + b`, W stored row-major `[outputs][inputs]`.
    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &theta[self.offset..self.bias_offset()];
        let b = &theta[self.bias_offset()..self.bias_offset() + self.outputs];
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[o]
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, theta: &[f64], x: &[f64], dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let bo = self.bias_offset();
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = self.offset + o * self.inputs;
            for i in 0..self.inputs {
                grad[row + i] += g * x[i];
                dx[i] += g * theta[row + i];
            }
            grad[bo + o] += g;
        }
        dx
    }

    fn init<R: Rng + ?Sized>(&self, theta: &mut [f64], rng: &mut R, gain: f64) {
        let std = gain / (self.inputs as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut theta[self.offset..self.bias_offset()] {
            *w = normal.sample(rng);
        }
        for b in &mut theta[self.bias_offset()..self.bias_offset() + self.outputs] {
            *b = 0.0;
        }
    }
}

/// Stack of tanh layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TanhStack {
    pub layers: Vec<Dense>,
}

impl TanhStack {
    fn new(input: usize, hidden: &[usize], offset: &mut usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = input;
        for &h in hidden {
            let d = Dense { inputs: prev, outputs: h, offset: *offset };
            *offset += d.n_params();
            layers.push(d);
            prev = h;
        }
        Self { layers }
    }

    pub fn output_len(&self, input: usize) -> usize {
        self.layers.last().map_or(input, |l| l.outputs)
    }

    /// Returns every activation, input first.
    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let z = layer.forward(theta, acts.last().unwrap());
            acts.push(z.into_iter().map(f64::tanh).collect());
        }
        acts
    }

    pub fn backward(&self, theta: &[f64], acts: &[Vec<f64>], dtop: Vec<f64>, grad: &mut [f64]) {
        let mut d = dtop;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &acts[k + 1];
            let dz: Vec<f64> = d.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
            d = layer.backward(theta, &acts[k], &dz, grad);
        }
    }
}

/// Layout of the actor: shared torso and three heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub feature_len: usize,
    pub hidden: Vec<usize>,
    pub n_agents: usize,
    pub torso: TanhStack,
    /// One Bernoulli logit per agent.
    pub coalition: Dense,
    /// Accept logit.
    pub response: Dense,
    /// Mean and log-std of the payoff logits, `2 * n_agents` outputs.
    pub proposal: Dense,
    pub n_params: usize,
}

impl PolicyNet {
    pub fn new(feature_len: usize, hidden: &[usize], n_agents: usize) -> Self {
        let mut offset = 0;
        let torso = TanhStack::new(feature_len, hidden, &mut offset);
        let h = torso.output_len(feature_len);
        let mut head = |outputs: usize| {
            let d = Dense { inputs: h, outputs, offset };
            offset += d.n_params();
            d
        };
        let coalition = head(n_agents);
        let response = head(1);
        let proposal = head(2 * n_agents);
        Self {
            feature_len,
            hidden: hidden.to_vec(),
            n_agents,
            torso,
            coalition,
            response,
            proposal,
            n_params: offset,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params];
        for l in &self.torso.layers {
            l.init(&mut theta, rng, 1.0);
        }
        self.coalition.init(&mut theta, rng, 0.01);
        self.response.init(&mut theta, rng, 0.01);
        self.proposal.init(&mut theta, rng, 0.01);
        theta
    }

    pub fn forward(&self, theta: &[f64], x: &[f64]) -> PolicyOutput {
        let acts = self.torso.forward(theta, x);
        let h = acts.last().unwrap();
        let coalition_logits = self.coalition.forward(theta, h);
        let response_logit = self.response.forward(theta, h)[0];
        let p = self.proposal.forward(theta, h);
        PolicyOutput {
            coalition_logits,
            response_logit,
            proposal_mean: p[..self.n_agents].to_vec(),
            proposal_log_std: p[self.n_agents..].to_vec(),
            acts,
        }
    }

    /// Backpropagates head-logit gradients into `grad`. The proposal head
    /// receives no gradient because its samples are masked out.
    pub fn backward(&self, theta: &[f64], out: &PolicyOutput, d_coalition: &[f64], d_response: f64, grad: &mut [f64]) {
        let h = out.acts.last().unwrap();
        let mut dh = self.coalition.backward(theta, h, d_coalition, grad);
        let dr = self.response.backward(theta, h, &[d_response], grad);
        for (a, b) in dh.iter_mut().zip(dr) {
            *a += b;
        }
        self.torso.backward(theta, &out.acts, dh, grad);
    }
}

#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub coalition_logits: Vec<f64>,
    pub response_logit: f64,
    pub proposal_mean: Vec<f64>,
    pub proposal_log_std: Vec<f64>,
    acts: Vec<Vec<f64>>,
}

/// Value network estimating the return from the initial observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineNet {
    pub feature_len: usize,
    pub hidden: Vec<usize>,
    pub torso: TanhStack,
    pub head: Dense,
    pub n_params: usize,
}

impl BaselineNet {
    pub fn new(feature_len: usize, hidden: &[usize]) -> Self {
        let mut offset = 0;
        let torso = TanhStack::new(feature_len, hidden, &mut offset);
        let head = Dense {
            inputs: torso.output_len(feature_len),
            outputs: 1,
            offset,
        };
        offset += head.n_params();
        Self {
            feature_len,
            hidden: hidden.to_vec(),
            torso,
            head,
            n_params: offset,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params];
        for l in &self.torso.layers {
            l.init(&mut theta, rng, 1.0);
        }
        self.head.init(&mut theta, rng, 0.01);
        theta
    }

    pub fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        let acts = self.torso.forward(theta, x);
        self.head.forward(theta, acts.last().unwrap())[0]
    }

    /// Prediction and a closure-free backward pass: accumulates `dvalue * dV/dtheta`.
    pub fn predict_with_grad(&self, theta: &[f64], x: &[f64], dvalue: impl FnOnce(f64) -> f64, grad: &mut [f64]) -> f64 {
        let acts = self.torso.forward(theta, x);
        let h = acts.last().unwrap();
        let v = self.head.forward(theta, h)[0];
        let g = dvalue(v);
        if g != 0.0 {
            let dh = self.head.backward(theta, h, &[g], grad);
            self.torso.backward(theta, &acts, dh, grad);
        }
        v
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln P(b)` for a Bernoulli with logit `l`.
#[inline]
pub fn bernoulli_log_prob(l: f64, b: bool) -> f64 {
    if b {
        -softplus(-l)
    } else {
        -softplus(l)
    }
}

#[inline]
pub fn bernoulli_entropy(l: f64) -> f64 {
    let p = sigmoid(l);
    p * softplus(-l) + (1.0 - p) * softplus(l)
}

/// Softmax over payoff logits with non-members pinned to a large negative
/// value. With `force_equal`, members' logits are pinned to 1, which yields
/// the egalitarian split.
pub fn masked_softmax(logits: &[f64], members: &[bool], force_equal: bool) -> Vec<f64> {
    const MASKED: f64 = -1e9;
    let z: Vec<f64> = logits
        .iter()
        .zip(members)
        .map(|(&l, &m)| match (m, force_equal) {
            (false, _) => MASKED,
            (true, true) => 1.0,
            (true, false) => l,
        })
        .collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masked_softmax_equal_split() {
        let x = masked_softmax(&[0.3, -2.0, 5.0], &[true, true, false], true);
        assert_eq!(x, vec![0.5, 0.5, 0.0]);
        let g = masked_softmax(&[9.0, 0.0, -9.0], &[true, true, true], true);
        for v in g {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bernoulli_helpers() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((bernoulli_entropy(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bernoulli_log_prob(2.0, true) - sigmoid(2.0).ln()).abs() < 1e-14);
        assert!((bernoulli_log_prob(2.0, false) - (1.0 - sigmoid(2.0)).ln()).abs() < 1e-14);
        assert!(bernoulli_log_prob(800.0, false).is_finite());
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn random_params_give_valid_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PolicyNet::new(20, &[16, 16], 3);
        for _ in 0..50 {
            let mut theta = net.init(&mut rng);
            for t in theta.iter_mut() {
                *t += rng.random_range(-1.0..1.0);
            }
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = net.forward(&theta, &x);
            for &l in out.coalition_logits.iter().chain([out.response_logit].iter()) {
                let p = sigmoid(l);
                assert!(p.is_finite() && p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn dense_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = BaselineNet::new(5, &[4, 3]);
        let theta = net.init(&mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; net.n_params];
        net.predict_with_grad(&theta, &x, |_| 1.0, &mut grad);
        for k in 0..net.n_params {
            let h = 1e-6;
            let mut p = theta.clone();
            p[k] += h;
            let up = net.predict(&p, &x);
            p[k] -= 2.0 * h;
            let down = net.predict(&p, &x);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-7 + 1e-4 * fd.abs(), "param {k}: {fd} vs {}", grad[k]);
        }
    }
}
