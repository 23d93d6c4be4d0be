use crate::{NormError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NormError::ShapeMismatch(format!(
            "{} parameters, {} gradients, optimizer state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0, 1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[3.0, -0.5], &mut s, 0.01).unwrap();
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε)
        assert!((p[0] - (1.0 - 0.01 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (1.0 + 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!(adam_step(&mut p, &[1.0], &mut s, 0.01).is_err());
    }

    #[test]
    fn deterministic_and_converges_on_quadratic() {
        // f(x) = ½ Σ d_i (x_i - c_i)²
        let d: Vec<f64> = (0..10).map(|i| 0.5 + i as f64).collect();
        let c: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let run = |steps: usize| {
            let mut x = vec![0.0; 10];
            let mut s = AdamState::new(10);
            let mut gnorm = f64::INFINITY;
            for k in 0..steps {
                let g: Vec<f64> = (0..10).map(|i| d[i] * (x[i] - c[i])).collect();
                gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if gnorm < 1e-6 {
                    return (x, gnorm, k);
                }
                let lr = if k < 2000 { 1e-2 } else { 1e-3 };
                adam_step(&mut x, &g, &mut s, lr).unwrap();
            }
            (x, gnorm, steps)
        };
        let (a, _, _) = run(10);
        let (b, _, _) = run(10);
        assert_eq!(a, b);
        let (_, gnorm, steps) = run(5000);
        assert!(gnorm < 1e-6, "gradient norm {gnorm} after {steps} steps");
    }
}
