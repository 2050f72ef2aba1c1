use serde::{Deserialize, Serialize};

use super::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `d = g + wd * p; buf = momentum * buf + d; p -= lr * buf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    buffers: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            buffers: Vec::new(),
        }
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    pub fn set_buffers(&mut self, buffers: Vec<Vec<f64>>) {
        self.buffers = buffers;
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &Gradients, lr: f64) {
        if self.buffers.len() != params.len() {
            self.buffers = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        let SgdConfig {
            momentum,
            weight_decay,
            ..
        } = self.config;
        for ((p, g), buf) in params.into_iter().zip(&grads.0).zip(&mut self.buffers) {
            for ((w, &gi), b) in p.iter_mut().zip(g).zip(buf.iter_mut()) {
                let d = gi + weight_decay * *w;
                *b = momentum * *b + d;
                *w -= lr * *b;
            }
        }
    }
}
