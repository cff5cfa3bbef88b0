//! First-order optimizers operating on flat parameter slots.
//!
//! A training step calls [`Optimizer::begin_step`] once, then
//! [`Optimizer::update`] for every parameter slot in a fixed order.

use crate::Float;

pub trait Optimizer<F: Float>: Send {
    fn begin_step(&mut self);
    fn update(&mut self, slot: usize, param: &mut [F], grad: &[F]);
    fn set_lr(&mut self, lr: f64);
    fn lr(&self) -> f64;
}

/// Adaptive-moment descent with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Self::with_moments(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

impl<F: Float> Optimizer<F> for Adam<F> {
    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn update(&mut self, slot: usize, param: &mut [F], grad: &[F]) {
        if self.m.len() <= slot {
            self.m.resize(slot + 1, Vec::new());
            self.v.resize(slot + 1, Vec::new());
        }
        if self.m[slot].len() != param.len() {
            self.m[slot] = vec![F::zero(); param.len()];
            self.v[slot] = vec![F::zero(); param.len()];
        }
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = F::of(1.0 - self.beta1.powi(self.t.max(1)));
        let c2 = F::of(1.0 - self.beta2.powi(self.t.max(1)));
        let (lr, eps) = (F::of(self.lr), F::of(self.eps));
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (F::one() - b1) * g;
            v[i] = b2 * v[i] + (F::one() - b2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            param[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn lr(&self) -> f64 {
        self.lr
    }
}

/// Plain stochastic gradient descent with optional momentum.
#[derive(Debug, Clone)]
pub struct Sgd<F> {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<F>>,
}

impl<F: Float> Sgd<F> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl<F: Float> Optimizer<F> for Sgd<F> {
    fn begin_step(&mut self) {}

    fn update(&mut self, slot: usize, param: &mut [F], grad: &[F]) {
        let lr = F::of(self.lr);
        if self.momentum == 0.0 {
            for (p, &g) in param.iter_mut().zip(grad) {
                *p -= lr * g;
            }
            return;
        }
        if self.velocity.len() <= slot {
            self.velocity.resize(slot + 1, Vec::new());
        }
        if self.velocity[slot].len() != param.len() {
            self.velocity[slot] = vec![F::zero(); param.len()];
        }
        let mu = F::of(self.momentum);
        for ((p, &g), v) in param.iter_mut().zip(grad).zip(self.velocity[slot].iter_mut()) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn lr(&self) -> f64 {
        self.lr
    }
}
