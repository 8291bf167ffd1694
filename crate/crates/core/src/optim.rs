//! Mini-batch SGD with Nesterov momentum.
//!
//! The update uses the reformulation that evaluates the gradient at the
//! current parameters rather than at the look-ahead point:
//!
//! ```text
//! v' = mu v - lr g
//! theta' = theta - mu v + (1 + mu) v'
//! ```

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::nets::{is_classifier_param, Gradients, ParameterSet};

/// Velocity arrays mirroring every parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: ParameterSet,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        Self { velocity: params.zeros_like() }
    }
}

/// Updates one array and its velocity in place.
pub fn nesterov_update(param: &mut Array2<f64>, grad: &Array2<f64>, velocity: &mut Array2<f64>, lr: f64, momentum: f64) -> Result<()> {
    if param.dim() != grad.dim() || param.dim() != velocity.dim() {
        return Err(Error::Dimension { op: "nesterov_update", left: param.dim(), right: grad.dim() });
    }
    Zip::from(param).and(grad).and(velocity).for_each(|p, &g, v| {
        let old = *v;
        let new = momentum * old - lr * g;
        *v = new;
        *p += -momentum * old + (1.0 + momentum) * new;
    });
    Ok(())
}

/// Applies one step to every parameter array. Classifier arrays use
/// `lr_classifier`, all others `lr_feature`. Nothing is modified when a
/// gradient is non-finite or misshapen.
pub fn sgd_nesterov_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr_feature: f64,
    lr_classifier: f64,
    momentum: f64,
) -> Result<()> {
    if !(lr_feature > 0.0 && lr_classifier > 0.0) || !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!(
            "invalid optimizer settings lr_feature={lr_feature} lr_classifier={lr_classifier} momentum={momentum}"
        )));
    }
    for ((name, p), ((_, g), (_, v))) in params.named().into_iter().zip(grads.named().into_iter().zip(state.velocity.named())) {
        if p.dim() != g.dim() || p.dim() != v.dim() {
            return Err(Error::Dimension { op: "sgd_nesterov_step", left: p.dim(), right: g.dim() });
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
    }
    for ((name, p), ((_, g), (_, v))) in params
        .named_mut()
        .into_iter()
        .zip(grads.named().into_iter().zip(state.velocity.named_mut()))
    {
        let lr = if is_classifier_param(name) { lr_classifier } else { lr_feature };
        nesterov_update(p, g, v, lr, momentum)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Architecture;
    use ndarray::array;

    fn tiny() -> ParameterSet {
        ParameterSet::init_with(Architecture { d_in: 3, embed_dim: 4, lstm_hidden: 2 }, 1).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = tiny();
        let before = p.clone();
        let mut state = OptimizerState::new(&p);
        let zero = p.zeros_like();
        sgd_nesterov_step(&mut p, &zero, &mut state, 0.1, 1.0, 0.9).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.velocity, before.zeros_like());
    }

    #[test]
    fn hand_computed_quadratic_steps() {
        // f = theta^2 / 2, g = theta
        let mut theta = array![[1.0]];
        let mut v = array![[0.0]];
        let g = theta.clone();
        nesterov_update(&mut theta, &g, &mut v, 0.1, 0.9).unwrap();
        // v = -0.1, theta = 1 - 0 + 1.9 * (-0.1)
        assert!((v[[0, 0]] + 0.1).abs() < 1e-15);
        assert!((theta[[0, 0]] - 0.81).abs() < 1e-15);
        let g = theta.clone();
        nesterov_update(&mut theta, &g, &mut v, 0.1, 0.9).unwrap();
        // v = -0.09 - 0.081 = -0.171, theta = 0.81 + 0.09 - 0.3249
        assert!((v[[0, 0]] + 0.171).abs() < 1e-15);
        assert!((theta[[0, 0]] - 0.5751).abs() < 1e-14);
    }

    #[test]
    fn matches_lookahead_form() {
        // Original form: u' = mu u - lr g(phi + mu u), phi' = phi + u'.
        // The stored parameter is theta = phi + mu u.
        let (lr, mu) = (0.05, 0.9);
        let grad = |x: f64| 3.0 * x - 1.0;
        let (mut phi, mut u) = (2.0, 0.0);
        let mut theta = array![[phi]];
        let mut v = array![[0.0]];
        for _ in 0..50 {
            u = mu * u - lr * grad(phi + mu * u);
            phi += u;
            let g = theta.mapv(grad);
            nesterov_update(&mut theta, &g, &mut v, lr, mu).unwrap();
            assert!((theta[[0, 0]] - (phi + mu * u)).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let h = array![[2.0, 0.5], [0.5, 1.0]];
        let opt = array![[1.0, -2.0]];
        let mut theta = array![[0.0, 0.0]];
        let mut v = Array2::zeros((1, 2));
        let mut steps = 0;
        while (&theta - &opt).iter().map(|d: &f64| d.abs()).fold(0.0, f64::max) > 1e-6 {
            let g = (&theta - &opt).dot(&h);
            nesterov_update(&mut theta, &g, &mut v, 0.1, 0.9).unwrap();
            steps += 1;
            assert!(steps <= 200, "not converged after 200 steps: {theta}");
        }
    }

    #[test]
    fn classifier_uses_its_own_rate() {
        let mut p = tiny();
        let before = p.clone();
        let mut state = OptimizerState::new(&p);
        let mut grads = p.zeros_like();
        for (_, g) in grads.named_mut() {
            g.fill(1.0);
        }
        sgd_nesterov_step(&mut p, &grads, &mut state, 0.001, 0.01, 0.9).unwrap();
        for ((name, a), (_, b)) in p.named().into_iter().zip(before.named()) {
            let expected = if is_classifier_param(name) { -0.019 } else { -0.0019 };
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y - expected).abs() < 1e-15, "{name}");
            }
        }
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = tiny();
        let before = p.clone();
        let mut state = OptimizerState::new(&p);
        let mut grads = p.zeros_like();
        grads.phi_w.fill(1.0);
        grads.cls_b[[0, 0]] = f64::NAN;
        let err = sgd_nesterov_step(&mut p, &grads, &mut state, 0.1, 0.1, 0.9).unwrap_err();
        assert!(err.is_numeric());
        assert_eq!(p, before);

        let mut grads = p.zeros_like();
        grads.dec_b = Array2::zeros((1, 1));
        assert!(matches!(
            sgd_nesterov_step(&mut p, &grads, &mut state, 0.1, 0.1, 0.9),
            Err(Error::Dimension { .. })
        ));
        let zero = p.zeros_like();
        assert!(sgd_nesterov_step(&mut p, &zero, &mut state, 0.0, 0.1, 0.9).is_err());
    }
}
