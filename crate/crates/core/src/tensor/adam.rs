//! Adam optimizer with bias correction.

use super::element::Element;
use super::{Result, TensorError};

/// Optimizer state: one pair of moment buffers per parameter, in parameter
/// order. Buffers are allocated on the first step.
#[derive(Debug, Clone)]
pub struct AdamState<E: Element> {
    pub learning_rate: E,
    pub beta1: E,
    pub beta2: E,
    pub epsilon: E,
    pub step_count: u64,
    first_moment: Vec<Vec<E>>,
    second_moment: Vec<Vec<E>>,
}

impl<E: Element> AdamState<E> {
    /// beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(learning_rate: E) -> Self {
        AdamState {
            learning_rate,
            beta1: E::from_f64(0.9),
            beta2: E::from_f64(0.999),
            epsilon: E::from_f64(1e-8),
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }
}

/// One Adam update over a parameter list. `params[i]` and `grads[i]` must be
/// shape-congruent; state buffers are checked against them.
pub fn adam_step<E: Element>(
    params: &mut [&mut [E]],
    grads: &[&[E]],
    state: &mut AdamState<E>,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(TensorError::ShapeMismatch(format!(
            "adam_step: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| vec![E::ZERO; p.len()]).collect();
        state.second_moment = state.first_moment.clone();
    }
    if state.first_moment.len() != params.len() {
        return Err(TensorError::ShapeMismatch(format!(
            "adam_step: state tracks {} params, got {}",
            state.first_moment.len(),
            params.len()
        )));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = E::ONE - state.beta1.powi(t);
    let bias2 = E::ONE - state.beta2.powi(t);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(&mut state.second_moment))
    {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "adam_step: param/grad/moment lengths {} / {} / {}",
                p.len(),
                g.len(),
                m.len()
            )));
        }
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (E::ONE - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (E::ONE - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![0.5f64, -0.25];
        let g = vec![0.0f64, 0.0];
        let mut state = AdamState::new(0.1);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert_eq!(p, vec![0.5, -0.25]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // t=1: m_hat = g, v_hat = g^2, step = lr*g/(|g|+eps) ≈ lr.
        let mut p = vec![0.0f64];
        let g = vec![1.0f64];
        let mut state = AdamState::new(0.1);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8, "got {}", p[0]);
    }

    #[test]
    fn repeated_identical_gradients_move_monotonically() {
        let mut p = vec![1.0f64];
        let g = vec![0.3f64];
        let mut state = AdamState::new(0.01);
        let mut prev = p[0];
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
            assert!(p[0] < prev);
            prev = p[0];
        }
    }

    #[test]
    fn step_count_increments_by_one() {
        let mut p = vec![0.0f32];
        let g = vec![1.0f32];
        let mut state = AdamState::new(0.01);
        for want in 1..=4u64 {
            adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
            assert_eq!(state.step_count, want);
        }
    }
}
