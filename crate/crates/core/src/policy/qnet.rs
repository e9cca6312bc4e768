use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One-hidden-layer Q-network `q = W2·relu(W1·x + b1) + b2`.
///
/// Parameters live in one flat buffer laid out as `W1 (hidden×input,
/// row-major) | b1 | W2 (actions×hidden, row-major) | b2`, which is also the
/// order used by the optimiser and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    input: usize,
    hidden: usize,
    actions: usize,
    params: Vec<f64>,
}

/// Per-example activations kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub hidden: Vec<f64>,
    pub q: Vec<f64>,
}

impl QNetwork {
    pub fn param_count(input: usize, hidden: usize, actions: usize) -> usize {
        hidden * input + hidden + actions * hidden + actions
    }

    pub fn zeros(input: usize, hidden: usize, actions: usize) -> Self {
        Self { input, hidden, actions, params: vec![0.0; Self::param_count(input, hidden, actions)] }
    }

    /// He-scaled Gaussian weights, zero biases.
    pub fn he_init(input: usize, hidden: usize, actions: usize, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(input, hidden, actions);
        let n1 = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).expect("positive std");
        let (w1, _, w2, _) = net.split_mut();
        w1.iter_mut().for_each(|w| *w = n1.sample(rng));
        w2.iter_mut().for_each(|w| *w = n2.sample(rng));
        net
    }

    pub fn from_params(input: usize, hidden: usize, actions: usize, params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::param_count(input, hidden, actions)).then_some(Self { input, hidden, actions, params })
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 3] {
        let a = self.hidden * self.input;
        let b = a + self.hidden;
        let c = b + self.actions * self.hidden;
        [a, b, c]
    }

    /// `(W1, b1, W2, b2)`.
    pub fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let [a, b, c] = self.offsets();
        let (w1, rest) = self.params.split_at(a);
        let (b1, rest) = rest.split_at(b - a);
        let (w2, b2) = rest.split_at(c - b);
        (w1, b1, w2, b2)
    }

    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let [a, b, c] = self.offsets();
        let (w1, rest) = self.params.split_at_mut(a);
        let (b1, rest) = rest.split_at_mut(b - a);
        let (w2, b2) = rest.split_at_mut(c - b);
        (w1, b1, w2, b2)
    }

    pub(crate) fn activations(&self, x: &[f64]) -> Activations {
        debug_assert_eq!(x.len(), self.input);
        let (w1, b1, w2, b2) = self.split();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &w1[j * self.input..(j + 1) * self.input];
                let z = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let q = (0..self.actions)
            .map(|k| {
                let row = &w2[k * self.hidden..(k + 1) * self.hidden];
                b2[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        Activations { hidden, q }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).q
    }

    pub fn max_q(&self, x: &[f64]) -> f64 {
        self.forward(x).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean squared error of `Q(s_i)[a_i]` against `targets`, and its exact
    /// gradient with respect to every parameter (same layout as `params`).
    pub fn loss_and_gradient(&self, states: &[&[f64]], actions: &[usize], targets: &[f64]) -> (f64, Vec<f64>) {
        let n = states.len();
        assert!(n > 0 && actions.len() == n && targets.len() == n);
        let mut grad = vec![0.0; self.params.len()];
        let [o1, o2, o3] = self.offsets();
        let (_, _, w2, _) = self.split();
        let mut loss = 0.0;
        for ((x, a), y) in states.iter().zip(actions).zip(targets) {
            let act = self.activations(x);
            let err = act.q[*a] - y;
            loss += err * err;
            let dq = 2.0 * err / n as f64;
            // Output layer: only action `a` receives gradient.
            grad[o3 + a] += dq;
            for (j, h) in act.hidden.iter().enumerate() {
                grad[o2 + a * self.hidden + j] += dq * h;
            }
            for (j, h) in act.hidden.iter().enumerate() {
                if *h <= 0.0 {
                    continue;
                }
                let dh = dq * w2[a * self.hidden + j];
                grad[o1 + j] += dh;
                let row = &mut grad[j * self.input..(j + 1) * self.input];
                row.iter_mut().zip(x.iter()).for_each(|(g, v)| *g += dh * v);
            }
        }
        (loss / n as f64, grad)
    }
}
