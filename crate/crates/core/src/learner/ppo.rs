//! Clipped-surrogate policy loss and clipped value loss, with gradients.

use serde::{Deserialize, Serialize};

use super::network::{bernoulli_entropy, bernoulli_log_prob, sigmoid, BaselineNet, PolicyNet, PolicyOutput};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DecisionKind {
    /// Coalition membership bits; `bits[self_index]` is fixed to 1 and
    /// contributes nothing to log-probability or entropy.
    Propose { self_index: usize, bits: Vec<bool> },
    Respond { accept: bool },
}

/// One sampled action of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub agent: usize,
    pub round: usize,
    pub features: Vec<f64>,
    pub kind: DecisionKind,
    pub old_log_prob: f64,
    pub reward_to_go: f64,
    pub advantage: f64,
}

/// Log-probability and entropy of the decision's action under `out`.
pub fn log_prob_entropy(out: &PolicyOutput, kind: &DecisionKind) -> (f64, f64) {
    match kind {
        DecisionKind::Propose { self_index, bits } => {
            let mut lp = 0.0;
            let mut h = 0.0;
            for (j, (&l, &b)) in out.coalition_logits.iter().zip(bits).enumerate() {
                if j != *self_index {
                    lp += bernoulli_log_prob(l, b);
                    h += bernoulli_entropy(l);
                }
            }
            (lp, h)
        }
        DecisionKind::Respond { accept } => (
            bernoulli_log_prob(out.response_logit, *accept),
            bernoulli_entropy(out.response_logit),
        ),
    }
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)` and its derivative in `ratio`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

fn dentropy(l: f64) -> f64 {
    let p = sigmoid(l);
    -l * p * (1.0 - p)
}

/// Mean over the batch of `-(surrogate + beta * entropy)`, with its
/// gradient in `theta`.
pub fn ppo_loss(net: &PolicyNet, theta: &[f64], batch: &[Decision], beta: f64, eps: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; theta.len()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for d in batch {
        let out = net.forward(theta, &d.features);
        let (lp, h) = log_prob_entropy(&out, &d.kind);
        let ratio = (lp - d.old_log_prob).exp();
        let (surr, dsurr_dratio) = clipped_surrogate(ratio, d.advantage, eps);
        let loss = -(surr + beta * h);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "policy loss {loss} (agent {}, round {}, ratio {ratio})",
                d.agent, d.round
            )));
        }
        total += loss;
        // d loss / d logp = -dsurr/dratio * ratio
        let g_lp = -dsurr_dratio * ratio / n;
        let g_h = -beta / n;
        match &d.kind {
            DecisionKind::Propose { self_index, bits } => {
                let dl: Vec<f64> = out
                    .coalition_logits
                    .iter()
                    .zip(bits)
                    .enumerate()
                    .map(|(j, (&l, &b))| {
                        if j == *self_index {
                            0.0
                        } else {
                            g_lp * (f64::from(u8::from(b)) - sigmoid(l)) + g_h * dentropy(l)
                        }
                    })
                    .collect();
                net.backward(theta, &out, &dl, 0.0, &mut grad);
            }
            DecisionKind::Respond { accept } => {
                let l = out.response_logit;
                let dl = g_lp * (f64::from(u8::from(*accept)) - sigmoid(l)) + g_h * dentropy(l);
                let zeros = vec![0.0; net.n_agents];
                net.backward(theta, &out, &zeros, dl, &mut grad);
            }
        }
    }
    Ok((total / n, grad))
}

/// A baseline training pair: initial-state features, the prediction
/// made when the batch was collected, and the realised return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSample {
    pub features: Vec<f64>,
    pub old_value: f64,
    pub target: f64,
}

/// Mean of `0.5 * max((V - R)^2, (V_clip - R)^2)` where `V_clip` stays
/// within `clip` of the old prediction; with its gradient.
pub fn baseline_loss(net: &BaselineNet, phi: &[f64], batch: &[ValueSample], clip: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; phi.len()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let mut loss = 0.0;
        net.predict_with_grad(
            phi,
            &s.features,
            |v| {
                let delta = v - s.old_value;
                let vc = s.old_value + delta.clamp(-clip, clip);
                let a = (v - s.target).powi(2);
                let b = (vc - s.target).powi(2);
                loss = 0.5 * a.max(b);
                if a >= b {
                    (v - s.target) / n
                } else if delta.abs() < clip {
                    (vc - s.target) / n
                } else {
                    0.0
                }
            },
            &mut grad,
        );
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("baseline loss {loss}")));
        }
        total += loss;
    }
    Ok((total / n, grad))
}

/// Shifts and scales in place to mean 0 and unit (population) variance.
/// A constant slice becomes all zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(net: &PolicyNet, theta: &[f64], rng: &mut ChaCha8Rng, size: usize) -> Vec<Decision> {
        (0..size)
            .map(|k| {
                let features: Vec<f64> = (0..net.feature_len).map(|_| rng.random_range(-1.0..1.0)).collect();
                let kind = if k % 2 == 0 {
                    let self_index = rng.random_range(0..net.n_agents);
                    let bits = (0..net.n_agents).map(|j| j == self_index || rng.random_bool(0.5)).collect();
                    DecisionKind::Propose { self_index, bits }
                } else {
                    DecisionKind::Respond { accept: rng.random_bool(0.5) }
                };
                let (lp, _) = log_prob_entropy(&net.forward(theta, &features), &kind);
                Decision {
                    agent: 0,
                    round: 1,
                    features,
                    kind,
                    // perturb so some ratios land outside the clip range
                    old_log_prob: lp + rng.random_range(-0.4..0.4),
                    reward_to_go: 0.0,
                    advantage: rng.random_range(-2.0..2.0),
                }
            })
            .collect()
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
    }

    #[test]
    fn zero_advantage_and_beta_gives_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = PolicyNet::new(6, &[8], 3);
        let theta = net.init(&mut rng);
        let mut batch = random_batch(&net, &theta, &mut rng, 10);
        for d in &mut batch {
            d.old_log_prob = log_prob_entropy(&net.forward(&theta, &d.features), &d.kind).0;
            d.advantage = 0.0;
        }
        let (loss, grad) = ppo_loss(&net, &theta, &batch, 0.0, 0.2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn clip_arithmetic() {
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2).0, 1.2);
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2).1, 0.0);
        assert_eq!(clipped_surrogate(0.5, 1.0, 0.2).0, 0.5);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2).0, -0.8);
        assert_eq!(clipped_surrogate(1.0, 0.0, 0.2).0, 0.0);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = PolicyNet::new(7, &[6, 5], 3);
        let mut theta = net.init(&mut rng);
        // larger heads so every block sees a non-trivial signal
        for t in theta.iter_mut() {
            *t += rng.random_range(-0.3..0.3);
        }
        let batch = random_batch(&net, &theta, &mut rng, 24);
        let (_, grad) = ppo_loss(&net, &theta, &batch, 0.4, 0.2).unwrap();
        let h = 1e-6;
        for k in 0..theta.len() {
            let mut p = theta.clone();
            p[k] += h;
            let up = ppo_loss(&net, &p, &batch, 0.4, 0.2).unwrap().0;
            p[k] -= 2.0 * h;
            let down = ppo_loss(&net, &p, &batch, 0.4, 0.2).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!(relative_error(fd, grad[k]) <= 1e-4, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn self_bit_carries_no_probability_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = PolicyNet::new(4, &[4], 3);
        let theta = net.init(&mut rng);
        let out = net.forward(&theta, &[0.1, 0.2, 0.3, 0.4]);
        let a = DecisionKind::Propose { self_index: 1, bits: vec![true, true, false] };
        let with_others_fixed = log_prob_entropy(&out, &a).0;
        let expected = bernoulli_log_prob(out.coalition_logits[0], true) + bernoulli_log_prob(out.coalition_logits[2], false);
        assert_eq!(with_others_fixed, expected);
    }

    #[test]
    fn baseline_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = BaselineNet::new(5, &[4]);
        let phi = net.init(&mut rng);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

        // perfect predictions
        let perfect: Vec<ValueSample> = xs
            .iter()
            .map(|x| {
                let v = net.predict(&phi, x);
                ValueSample { features: x.clone(), old_value: v, target: v }
            })
            .collect();
        assert_eq!(baseline_loss(&net, &phi, &perfect, 0.2).unwrap().0, 0.0);

        // constant returns, constant predictor: zero head weights, bias = c
        let c = 0.37;
        let mut constant = phi.clone();
        let head = &net.head;
        for w in &mut constant[head.offset..head.offset + head.inputs] {
            *w = 0.0;
        }
        constant[head.offset + head.inputs] = c;
        let samples: Vec<ValueSample> =
            xs.iter().map(|x| ValueSample { features: x.clone(), old_value: c, target: c }).collect();
        assert_eq!(baseline_loss(&net, &constant, &samples, 0.2).unwrap().0, 0.0);
    }

    #[test]
    fn baseline_fits_constant_by_descent() {
        use crate::learner::adam::Adam;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = BaselineNet::new(3, &[4]);
        let mut phi = net.init(&mut rng);
        let xs: Vec<Vec<f64>> = (0..16).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut opt = Adam::new(phi.len(), 1e-2, None);
        let mut loss = f64::INFINITY;
        for _ in 0..3000 {
            let batch: Vec<ValueSample> = xs
                .iter()
                .map(|x| ValueSample { features: x.clone(), old_value: net.predict(&phi, x), target: 0.8 })
                .collect();
            let (l, g) = baseline_loss(&net, &phi, &batch, 0.2).unwrap();
            loss = l;
            opt.step(&mut phi, &g);
        }
        assert!(loss < 1e-6, "{loss}");
    }

    #[test]
    fn baseline_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = BaselineNet::new(6, &[5]);
        let phi = net.init(&mut rng);
        let batch: Vec<ValueSample> = (0..20)
            .map(|_| {
                let features: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = net.predict(&phi, &features);
                ValueSample {
                    old_value: v + rng.random_range(-0.5..0.5),
                    target: rng.random_range(-1.0..1.0),
                    features,
                }
            })
            .collect();
        let (_, grad) = baseline_loss(&net, &phi, &batch, 0.2).unwrap();
        let h = 1e-6;
        for k in 0..phi.len() {
            let mut p = phi.clone();
            p[k] += h;
            let up = baseline_loss(&net, &p, &batch, 0.2).unwrap().0;
            p[k] -= 2.0 * h;
            let down = baseline_loss(&net, &p, &batch, 0.2).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!(relative_error(fd, grad[k]) <= 1e-4, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn advantage_normalisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..7.0)).collect();
        normalize_advantages(&mut a);
        let mean = a.iter().sum::<f64>() / 200.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 200.0).sqrt();
        assert!(mean.abs() <= 1e-6 && (std - 1.0).abs() <= 1e-6);
        let mut c = vec![2.0; 5];
        normalize_advantages(&mut c);
        assert_eq!(c, vec![0.0; 5]);
    }
}
