//! Named trainable variables and the two layer types every model here uses.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::functional::{conv2d, linear};
use crate::tensor::Tensor;

struct VarInner {
    name: String,
    shape: Vec<usize>,
    value: RefCell<Tensor>,
}

/// Handle to a trainable tensor. Clones share the same slot.
#[derive(Clone)]
pub struct Var(Rc<VarInner>);

impl Var {
    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    /// Current value as a gradient leaf.
    pub fn tensor(&self) -> Tensor {
        self.0.value.borrow().clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.value.borrow().to_vec()
    }

    /// Replaces the value, keeping the shape.
    pub fn set(&self, data: Vec<f64>) {
        assert_eq!(data.len(), self.0.shape.iter().product::<usize>(), "var {} size mismatch", self.0.name);
        *self.0.value.borrow_mut() = Tensor::param(data, &self.0.shape);
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({} {:?})", self.0.name, self.0.shape)
    }
}

/// Registry of variables in creation order.
#[derive(Default)]
pub struct VarStore {
    vars: RefCell<Vec<Var>>,
}

impl VarStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Var {
        let name = name.into();
        assert!(
            self.vars.borrow().iter().all(|v| v.name() != name),
            "duplicate variable name {name}"
        );
        let v = Var(Rc::new(VarInner {
            name,
            shape: shape.to_vec(),
            value: RefCell::new(Tensor::param(data, shape)),
        }));
        self.vars.borrow_mut().push(v.clone());
        v
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.borrow().clone()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.borrow().iter().find(|v| v.name() == name).cloned()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.borrow().iter().map(|v| v.shape().iter().product::<usize>()).sum()
    }

    /// Current leaf tensors, in the same order as [`VarStore::vars`].
    pub fn tensors(&self) -> Vec<Tensor> {
        self.vars.borrow().iter().map(Var::tensor).collect()
    }
}

pub fn uniform_init(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; n];
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn normal_init(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// Dense layer, `y = x W + b` with `W: (in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
    /// Runtime weight multiplier (equalized learning rate); 1 for plain layers.
    pub gain: f64,
}

impl Linear {
    /// Uniform init in `±1/sqrt(in)` for weight and bias.
    pub fn new(vs: &VarStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = vs.var(format!("{name}.weight"), &[inputs, outputs], uniform_init(rng, inputs * outputs, bound));
        let bias = vs.var(format!("{name}.bias"), &[outputs], uniform_init(rng, outputs, bound));
        Linear { weight, bias, gain: 1.0 }
    }

    /// Weights drawn from N(0, 1) and scaled at runtime by the He constant.
    pub fn equalized(vs: &VarStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weight = vs.var(format!("{name}.weight"), &[inputs, outputs], normal_init(rng, inputs * outputs, 1.0));
        let bias = vs.var(format!("{name}.bias"), &[outputs], vec![0.0; outputs]);
        Linear {
            weight,
            bias,
            gain: (2.0 / inputs as f64).sqrt(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let w = self.weight.tensor();
        let w = if self.gain == 1.0 { w } else { w.scale(self.gain) };
        linear(x, &w, Some(&self.bias.tensor()))
    }
}

/// 2-D convolution over `(N, C, H, W)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub gain: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    /// Stride 1, "same" padding for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            padding: (kernel.0 / 2, kernel.1 / 2),
        }
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }
}

impl Conv2d {
    pub fn new(vs: &VarStore, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let shape = spec.weight_shape();
        let n: usize = shape.iter().product();
        let bound = 1.0 / (spec.fan_in() as f64).sqrt();
        let weight = vs.var(format!("{name}.weight"), &shape, uniform_init(rng, n, bound));
        let bias = vs.var(format!("{name}.bias"), &[spec.out_channels], uniform_init(rng, spec.out_channels, bound));
        Conv2d {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
            gain: 1.0,
        }
    }

    pub fn equalized(vs: &VarStore, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let shape = spec.weight_shape();
        let n: usize = shape.iter().product();
        let weight = vs.var(format!("{name}.weight"), &shape, normal_init(rng, n, 1.0));
        let bias = vs.var(format!("{name}.bias"), &[spec.out_channels], vec![0.0; spec.out_channels]);
        Conv2d {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
            gain: (2.0 / spec.fan_in() as f64).sqrt(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let w = self.weight.tensor();
        let w = if self.gain == 1.0 { w } else { w.scale(self.gain) };
        conv2d(x, &w, Some(&self.bias.tensor()), self.stride, self.padding)
    }
}
