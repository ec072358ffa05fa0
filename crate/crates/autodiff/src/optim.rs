use crate::nn::Var;
use crate::tensor::Tensor;

/// Adam with bias correction. Moments are kept per variable in `vars` order.
#[derive(Debug, Clone)]
pub struct Adam {
    vars: Vec<Var>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

/// Serializable optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let m = vars.iter().map(|v| vec![0.0; v.shape().iter().product()]).collect();
        let v2 = vars.iter().map(|v| vec![0.0; v.shape().iter().product()]).collect();
        Adam {
            vars,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            state: AdamState { step: 0, m, v: v2 },
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Current parameter leaves, to pass to [`crate::grad`].
    pub fn tensors(&self) -> Vec<Tensor> {
        self.vars.iter().map(Var::tensor).collect()
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_state(&mut self, state: AdamState) {
        assert_eq!(state.m.len(), self.vars.len(), "optimizer state arity mismatch");
        for ((m, v), var) in state.m.iter().zip(&state.v).zip(&self.vars) {
            let n: usize = var.shape().iter().product();
            assert!(m.len() == n && v.len() == n, "optimizer state size mismatch for {}", var.name());
        }
        self.state = state;
    }

    /// Applies one update given gradients aligned with `vars`.
    pub fn step(&mut self, grads: &[Tensor]) {
        assert_eq!(grads.len(), self.vars.len());
        self.state.step += 1;
        let t = self.state.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, (var, g)) in self.vars.iter().zip(grads).enumerate() {
            let mut p = var.to_vec();
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            var.set(p);
        }
    }
}
