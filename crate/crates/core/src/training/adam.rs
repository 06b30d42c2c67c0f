use crate::diffgrid::Grid;
use crate::error::{ensure, Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Grid]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update in place; `t` is incremented first.
pub fn adam_step(
    params: &mut [Grid],
    grads: &[Option<&Grid>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    ensure!(
        params.len() == grads.len()
            && params.len() == state.m.len()
            && params.len() == state.v.len(),
        "adam_step: {} params, {} grads, {} moment slots",
        params.len(),
        grads.len(),
        state.m.len()
    );
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let g =
            g.ok_or_else(|| Error::contract(format!("adam_step: parameter {i} has no gradient")))?;
        ensure!(
            g.shape() == p.shape() && state.m[i].len() == p.len() && state.v[i].len() == p.len(),
            "adam_step: shape mismatch at parameter {}",
            i
        );
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].expect("checked above").data();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let step = lr * (mj / c1) / ((vj / c2).sqrt() + state.eps);
            *w = (*w as f64 - step) as f32;
        }
    }
    Ok(())
}
