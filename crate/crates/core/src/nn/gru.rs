//! Gated recurrent unit built from tape primitives.

use rand::Rng;

use super::graph::{ParamGroup, ParamId, ParamStore, Var};
use super::ops::stack_time;
use super::tensor::Tensor;

/// Parameter handles of one GRU. The recurrent matrix is kept as three
/// square blocks (reset, update, candidate) so each can be regularized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub b_ih: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_hr: ParamId,
    pub b_hz: ParamId,
    pub b_hn: ParamId,
}

impl Gru {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut mat = |name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut dyn rand::RngCore| {
            store.add(format!("{prefix}.{name}"), ParamGroup::Main, uniform(&[rows, cols], fan_in, rng))
        };
        let w_ih = mat("w_ih", input, 3 * hidden, input, rng);
        let w_hr = mat("w_hr", hidden, hidden, hidden, rng);
        let w_hz = mat("w_hz", hidden, hidden, hidden, rng);
        let w_hn = mat("w_hn", hidden, hidden, hidden, rng);
        let mut bias = |name: &str, n: usize| store.add(format!("{prefix}.{name}"), ParamGroup::NoDecay, Tensor::zeros(&[n]));
        let b_ih = bias("b_ih", 3 * hidden);
        let b_hr = bias("b_hr", hidden);
        let b_hz = bias("b_hz", hidden);
        let b_hn = bias("b_hn", hidden);
        Self { input, hidden, w_ih, b_ih, w_hr, w_hz, w_hn, b_hr, b_hz, b_hn }
    }

    pub fn recurrent_blocks(&self) -> [ParamId; 3] {
        [self.w_hr, self.w_hz, self.w_hn]
    }

    /// Runs over `[B, S, input]` from a zero state; returns `[B, S, hidden]`.
    ///
    /// `r = sig(x W_r + h U_r)`, `z = sig(x W_z + h U_z)`,
    /// `n = tanh(x W_n + r * (h U_n))`, `h' = (1 - z) * n + z * h`.
    pub fn forward<'g>(&self, x: Var<'g>, params: &[Var<'g>]) -> Var<'g> {
        let shape = x.shape();
        assert_eq!(shape.len(), 3, "GRU input must be [B, S, D]");
        assert_eq!(shape[2], self.input);
        let (b, s, hd) = (shape[0], shape[1], self.hidden);
        let p = |id: ParamId| params[id.0];
        let xi = x.matmul(p(self.w_ih)).add_row(p(self.b_ih));
        let mut h = x.graph().constant(Tensor::zeros(&[b, hd]));
        let mut outs = Vec::with_capacity(s);
        for t in 0..s {
            let xt = xi.select_time(t);
            let (xr, xz, xn) = (xt.narrow_last(0, hd), xt.narrow_last(hd, hd), xt.narrow_last(2 * hd, hd));
            let r = xr.add(h.matmul(p(self.w_hr)).add_row(p(self.b_hr))).sigmoid();
            let z = xz.add(h.matmul(p(self.w_hz)).add_row(p(self.b_hz))).sigmoid();
            let n = xn.add(r.mul(h.matmul(p(self.w_hn)).add_row(p(self.b_hn)))).tanh();
            h = z.one_minus().mul(n).add(z.mul(h));
            outs.push(h);
        }
        stack_time(&outs)
    }
}

/// Uniform in `+-1/sqrt(fan_in)`.
pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut (impl Rng + ?Sized)) -> Tensor {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-a..a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, worst, GradCheckOptions};
    use crate::nn::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_and_weights_stay_at_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = Gru::new(&mut store, "g", 3, 5, &mut rng);
        for e in &mut store.entries {
            e.value.data.fill(0.0);
        }
        let g = Graph::new();
        let vars = g.bind(&store);
        let y = gru.forward(g.constant(Tensor::filled(&[2, 4, 3], 0.7)), &vars).value();
        assert_eq!(y.shape, vec![2, 4, 5]);
        assert!(y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = Gru::new(&mut store, "g", 3, 4, &mut rng);
        let x = uniform(&[2, 3, 3], 1, &mut rng);
        let mut inputs: Vec<Tensor> = store.entries.iter().map(|e| e.value.clone()).collect();
        inputs.push(x);
        let reports = check_gradients(
            &inputs,
            |_, v| {
                let (params, x) = v.split_at(v.len() - 1);
                let y = gru.forward(x[0], params);
                let w = Tensor::new(&y.shape(), (0..y.numel()).map(|i| (i as f64 * 0.37).cos()).collect());
                y.mul(y.graph().constant(w)).sum_all()
            },
            GradCheckOptions { step: 1e-3, ..Default::default() },
        );
        assert!(worst(&reports) <= 1e-4, "{reports:?}");
    }
}
