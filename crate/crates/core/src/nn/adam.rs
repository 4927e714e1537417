use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `params`, lr 0.01.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        let m: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor<f32>>,
    grads: &[Tensor<f32>],
    state: &mut AdamState,
) -> Result<()> {
    let params: Vec<&mut Tensor<f32>> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.len() != m.len() {
            return Err(Error::Shape(format!("adam: param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.into_iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            let g = g as f64;
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w = (*w as f64 - state.lr * mhat / (vhat.sqrt() + state.eps)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(p.iter_mut(), &[Tensor::zeros(&[3])], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
        adam_step(p.iter_mut(), &[Tensor::zeros(&[3])], &mut st).unwrap();
        assert_eq!(st.step, 2);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&p);
        let g = Tensor::from_f64(&[3], &[4.0, -0.25, 1000.0]).unwrap();
        adam_step(p.iter_mut(), &[g], &mut st).unwrap();
        let want = [-0.01, 0.01, -0.01];
        for (a, b) in p[0].data().iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&p);
        assert!(adam_step(p.iter_mut(), &[Tensor::zeros(&[4])], &mut st).is_err());
        assert_eq!(st.step, 0);
    }
}
