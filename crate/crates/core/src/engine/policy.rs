//! Autoregressive LSTM policy over a decision sequence.
//!
//! Position `t` feeds the embedding of the choice made at `t - 1` (a learned
//! start vector at `t = 0`) through one LSTM step, and a position-specific
//! head maps the hidden state to logits over that position's arity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

pub const LSTM_UNITS: usize = 100;

/// Parameter layout: `[w, u, b, start, emb_1..emb_{T-1}, head_w_0..head_w_{T-1}, head_b_0..head_b_{T-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    hidden: usize,
    arities: Vec<usize>,
    params: Vec<Tensor>,
}

/// A sampled sequence and its log-probability under the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub choices: Vec<usize>,
    pub log_prob: f64,
}

/// Gradients aligned with [`PolicyNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads(pub Vec<Tensor>);

impl PolicyGrads {
    pub fn global_norm(&self) -> f64 {
        self.0.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            for t in &mut self.0 {
                t.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
        norm
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Gate activations `[i | f | g | o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `out[j] += Σ_i x[i] · m[i, j]` for row-major `m: [x.len(), out.len()]`.
fn vec_mat(x: &[f64], m: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&xv, row) in x.iter().zip(m.chunks_exact(cols)) {
        if xv != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, w)| *o += xv * w);
        }
    }
}

/// `dm[i, j] += x[i] · d[j]`.
fn outer_acc(x: &[f64], d: &[f64], dm: &mut [f64]) {
    for (&xv, row) in x.iter().zip(dm.chunks_exact_mut(d.len())) {
        row.iter_mut().zip(d).for_each(|(o, g)| *o += xv * g);
    }
}

/// `out[i] += Σ_j m[i, j] · d[j]`.
fn mat_vec(m: &[f64], d: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(d.len())) {
        *o += row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl PolicyNet {
    pub fn new(arities: &[usize], hidden: usize, seed: u64) -> Self {
        assert!(!arities.is_empty() && arities.iter().all(|&a| a > 0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |shape: &[usize], limit: f64| {
            let len = shape.iter().product();
            Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-limit..limit)).collect())
        };
        let glorot = |a: usize, b: usize| (6.0 / (a + b) as f64).sqrt();
        let h = hidden;
        let mut params = vec![
            uniform(&[h, 4 * h], glorot(h, 4 * h)),
            uniform(&[h, 4 * h], glorot(h, 4 * h)),
        ];
        let mut bias = Tensor::zeros(&[4 * h]);
        bias.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        params.push(bias);
        params.push(uniform(&[h], 0.05));
        for &a in &arities[..arities.len() - 1] {
            params.push(uniform(&[a, h], 0.05));
        }
        for &a in arities {
            params.push(uniform(&[h, a], glorot(h, a)));
        }
        for &a in arities {
            params.push(Tensor::zeros(&[a]));
        }
        Self {
            hidden,
            arities: arities.to_vec(),
            params,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn arities(&self) -> &[usize] {
        &self.arities
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn len(&self) -> usize {
        self.arities.len()
    }

    fn emb_index(&self, position: usize) -> usize {
        debug_assert!(position >= 1);
        3 + position
    }

    fn head_w_index(&self, position: usize) -> usize {
        4 + (self.len() - 1) + position
    }

    fn head_b_index(&self, position: usize) -> usize {
        4 + (self.len() - 1) + self.len() + position
    }

    /// Input vector at `position` given the previous choice.
    pub fn embedding(&self, position: usize, prev_choice: Option<usize>) -> &[f64] {
        match (position, prev_choice) {
            (0, _) | (_, None) => self.params[3].data(),
            (p, Some(c)) => &self.params[self.emb_index(p)].data()[c * self.hidden..(c + 1) * self.hidden],
        }
    }

    /// One recurrence step. Returns `(logits, h, c)`; logits have the
    /// position's arity.
    pub fn step(&self, position: usize, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let s = self.step_full(x, h, c);
        let logits = self.logits(position, &s.h);
        let c = self.cell_state(&s);
        (logits, s.h, c)
    }

    fn cell_state(&self, s: &Step) -> Vec<f64> {
        let hd = self.hidden;
        (0..hd)
            .map(|k| s.gates[hd + k] * s.c_prev[k] + s.gates[k] * s.gates[2 * hd + k])
            .collect()
    }

    fn step_full(&self, x: &[f64], h: &[f64], c: &[f64]) -> Step {
        let hd = self.hidden;
        let mut z = self.params[2].data().to_vec();
        vec_mat(x, self.params[0].data(), &mut z);
        vec_mat(h, self.params[1].data(), &mut z);
        let mut gates = z;
        for (k, v) in gates.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        let mut c_new = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h_new = vec![0.0; hd];
        for k in 0..hd {
            c_new[k] = gates[hd + k] * c[k] + gates[k] * gates[2 * hd + k];
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = gates[3 * hd + k] * tanh_c[k];
        }
        Step {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            gates,
            tanh_c,
            h: h_new,
            probs: Vec::new(),
        }
    }

    fn logits(&self, position: usize, h: &[f64]) -> Vec<f64> {
        let mut z = self.params[self.head_b_index(position)].data().to_vec();
        vec_mat(h, self.params[self.head_w_index(position)].data(), &mut z);
        z
    }

    /// Runs the sequence, choosing each position with `choose(position, probs)`.
    fn unroll(&self, mut choose: impl FnMut(usize, &[f64]) -> usize) -> (Vec<usize>, Vec<Step>) {
        let hd = self.hidden;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut prev = None;
        let mut choices = Vec::with_capacity(self.len());
        let mut steps = Vec::with_capacity(self.len());
        for t in 0..self.len() {
            let x = self.embedding(t, prev).to_vec();
            let mut s = self.step_full(&x, &h, &c);
            s.probs = softmax(&self.logits(t, &s.h));
            let a = choose(t, &s.probs);
            h = s.h.clone();
            c = self.cell_state(&s);
            prev = Some(a);
            choices.push(a);
            steps.push(s);
        }
        (choices, steps)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Rollout {
        let (choices, steps) = self.unroll(|_, probs| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return k;
                }
            }
            probs.len() - 1
        });
        let log_prob = choices.iter().zip(&steps).map(|(&a, s)| s.probs[a].ln()).sum();
        Rollout { choices, log_prob }
    }

    /// Panics if `choices` does not fit the arities.
    pub fn log_prob(&self, choices: &[usize]) -> f64 {
        self.log_prob_and_grads(choices, false).0
    }

    /// `log p(choices)` and its gradient with respect to every parameter.
    pub fn log_prob_grads(&self, choices: &[usize]) -> (f64, PolicyGrads) {
        let (lp, g) = self.log_prob_and_grads(choices, true);
        (lp, g.expect("requested"))
    }

    fn log_prob_and_grads(&self, choices: &[usize], want_grads: bool) -> (f64, Option<PolicyGrads>) {
        assert_eq!(choices.len(), self.len(), "sequence length");
        for (&a, &n) in choices.iter().zip(&self.arities) {
            assert!(a < n, "choice {a} outside arity {n}");
        }
        let (_, steps) = self.unroll(|t, _| choices[t]);
        let lp = choices.iter().zip(&steps).map(|(&a, s)| s.probs[a].ln()).sum();
        if !want_grads {
            return (lp, None);
        }

        let hd = self.hidden;
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for t in (0..self.len()).rev() {
            let s = &steps[t];
            let mut dlogits: Vec<f64> = s.probs.iter().map(|p| -p).collect();
            dlogits[choices[t]] += 1.0;
            outer_acc(&s.h, &dlogits, grads[self.head_w_index(t)].data_mut());
            grads[self.head_b_index(t)].add_assign(&Tensor::from_vec(&[dlogits.len()], dlogits.clone()));
            let mut dh = dh_next.clone();
            mat_vec(self.params[self.head_w_index(t)].data(), &dlogits, &mut dh);

            let g = &s.gates;
            let mut dz = vec![0.0; 4 * hd];
            let mut dc_prev = vec![0.0; hd];
            for k in 0..hd {
                let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
                let dc = dh[k] * o * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
                dz[k] = dc * gg * i * (1.0 - i);
                dz[hd + k] = dc * s.c_prev[k] * f * (1.0 - f);
                dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
                dz[3 * hd + k] = dh[k] * s.tanh_c[k] * o * (1.0 - o);
                dc_prev[k] = dc * f;
            }
            outer_acc(&s.x, &dz, grads[0].data_mut());
            outer_acc(&s.h_prev, &dz, grads[1].data_mut());
            grads[2].data_mut().iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
            let mut dx = vec![0.0; hd];
            mat_vec(self.params[0].data(), &dz, &mut dx);
            let mut dh_prev = vec![0.0; hd];
            mat_vec(self.params[1].data(), &dz, &mut dh_prev);
            let row = if t == 0 {
                &mut grads[3].data_mut()[..]
            } else {
                let c = choices[t - 1];
                let idx = self.emb_index(t);
                &mut grads[idx].data_mut()[c * hd..(c + 1) * hd]
            };
            row.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        (lp, Some(PolicyGrads(grads)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_and_input_give_head_bias() {
        let mut net = PolicyNet::new(&[3, 4], 8, 1);
        let bias = net.head_b_index(1);
        net.params_mut()[bias] = Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]);
        let (logits, h, c) = net.step(1, &[0.0; 8], &[0.0; 8], &[0.0; 8]);
        assert_eq!(logits, vec![0.1, 0.2, 0.3, 0.4]);
        assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    }

    #[test]
    fn step_cell_state_matches_unroll() {
        let net = PolicyNet::new(&[2, 2, 2], 6, 4);
        let (_, h1, c1) = net.step(0, net.embedding(0, None), &[0.0; 6], &[0.0; 6]);
        let (_, steps) = net.unroll(|_, _| 1);
        assert_eq!(h1, steps[0].h);
        assert_eq!(c1, steps[1].c_prev);
    }

    #[test]
    fn hidden_state_stays_bounded() {
        let arities = vec![5; 32];
        let net = PolicyNet::new(&arities, LSTM_UNITS, 9);
        let (_, steps) = net.unroll(|_, _| 4);
        let last = steps.last().unwrap();
        assert!(last.h.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn sample_is_consistent_with_log_prob() {
        let net = PolicyNet::new(&[1, 2, 3, 5], 10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = net.sample(&mut rng);
        assert!((r.log_prob - net.log_prob(&r.choices)).abs() < 1e-12);
        assert_eq!(r.choices[0], 0);
    }

    #[test]
    fn clip_caps_global_norm() {
        let mut g = PolicyGrads(vec![Tensor::from_vec(&[2], vec![3.0, 4.0])]);
        assert_eq!(g.clip(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
