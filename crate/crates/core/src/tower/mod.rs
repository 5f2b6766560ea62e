//! Trainable two-tower head: user and item MLPs, Adam, checkpoints.

mod checkpoint;
mod mlp;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CheckpointMeta};
pub use mlp::{
    leaky, mlp_apply, mlp_backward, mlp_backward_params, mlp_forward, MlpGrads, MlpParams, Tape, LEAKY_SLOPE,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TowerMode {
    /// One MLP applied to both users and items.
    One,
    #[default]
    Two,
}

impl std::str::FromStr for TowerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" | "one-tower" => Ok(TowerMode::One),
            "two" | "two-tower" => Ok(TowerMode::Two),
            _ => Err(Error::InvalidConfig(format!("tower mode must be one or two, got {s}"))),
        }
    }
}

/// User and item projection networks. In one-tower mode both roles resolve
/// to the same storage, so an update through either is seen by the other.
#[derive(Clone, Debug, PartialEq)]
pub enum TwoTowerParams {
    Shared(MlpParams),
    Separate { user: MlpParams, item: MlpParams },
}

impl TwoTowerParams {
    /// Hidden width defaults to half the input width.
    pub fn init(mode: TowerMode, d_in: usize, d_out: usize, seed: u64) -> Self {
        let d_hidden = (d_in / 2).max(1);
        match mode {
            TowerMode::One => TwoTowerParams::Shared(MlpParams::init(d_in, d_hidden, d_out, seed)),
            TowerMode::Two => TwoTowerParams::Separate {
                user: MlpParams::init(d_in, d_hidden, d_out, crate::rng::mix(seed, &[0])),
                item: MlpParams::init(d_in, d_hidden, d_out, crate::rng::mix(seed, &[1])),
            },
        }
    }

    pub fn mode(&self) -> TowerMode {
        match self {
            TwoTowerParams::Shared(_) => TowerMode::One,
            TwoTowerParams::Separate { .. } => TowerMode::Two,
        }
    }

    pub fn user(&self) -> &MlpParams {
        match self {
            TwoTowerParams::Shared(p) => p,
            TwoTowerParams::Separate { user, .. } => user,
        }
    }

    pub fn item(&self) -> &MlpParams {
        match self {
            TwoTowerParams::Shared(p) => p,
            TwoTowerParams::Separate { item, .. } => item,
        }
    }

    pub fn user_mut(&mut self) -> &mut MlpParams {
        match self {
            TwoTowerParams::Shared(p) => p,
            TwoTowerParams::Separate { user, .. } => user,
        }
    }

    pub fn item_mut(&mut self) -> &mut MlpParams {
        match self {
            TwoTowerParams::Shared(p) => p,
            TwoTowerParams::Separate { item, .. } => item,
        }
    }

    pub fn d_in(&self) -> usize {
        self.user().d_in
    }

    pub fn d_out(&self) -> usize {
        self.user().d_out
    }

    /// Distinct parameter sets with their name prefix.
    pub fn mlps(&self) -> Vec<(&'static str, &MlpParams)> {
        match self {
            TwoTowerParams::Shared(p) => vec![("shared", p)],
            TwoTowerParams::Separate { user, item } => vec![("user", user), ("item", item)],
        }
    }

    fn mlps_mut(&mut self) -> Vec<&mut MlpParams> {
        match self {
            TwoTowerParams::Shared(p) => vec![p],
            TwoTowerParams::Separate { user, item } => vec![user, item],
        }
    }

    /// Folds per-role gradients onto the distinct parameter sets: summed in
    /// one-tower mode, kept apart otherwise.
    pub fn combine_grads(&self, user: MlpGrads, item: MlpGrads) -> Vec<MlpGrads> {
        match self {
            TwoTowerParams::Shared(_) => {
                let mut g = user;
                g.add_assign(&item);
                vec![g]
            }
            TwoTowerParams::Separate { .. } => vec![user, item],
        }
    }

    pub fn apply_user(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        mlp_apply(self.user(), x)
    }

    pub fn apply_item(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        mlp_apply(self.item(), x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every tensor of every distinct MLP, in
/// `mlps()` then `w1, b1, w2, b2` order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &TwoTowerParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f32>> = params
            .mlps()
            .iter()
            .flat_map(|(_, p)| p.tensors().map(|t| vec![0.0; t.len()]))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update with a constant learning rate.
/// `grads` must align with `params.mlps()`.
pub fn adam_step(params: &mut TwoTowerParams, grads: &[MlpGrads], state: &mut AdamState) -> Result<()> {
    let names = params.mlps().iter().map(|(n, _)| *n).collect::<Vec<_>>();
    if grads.len() != names.len() || state.m.len() != names.len() * 4 {
        return Err(Error::DimensionMismatch {
            context: "adam gradient sets",
            expected: names.len(),
            found: grads.len(),
        });
    }
    for (prefix, g) in names.iter().zip(grads) {
        for (t, tname) in g.tensors().iter().zip(mlp::TENSOR_NAMES) {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient {prefix}.{tname}")));
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = (1.0 - f64::from(c.beta1).powi(t)) as f32;
    let bc2 = (1.0 - f64::from(c.beta2).powi(t)) as f32;
    let mut k = 0;
    for (p, g) in params.mlps_mut().into_iter().zip(grads) {
        for (theta, grad) in p.tensors_mut().into_iter().zip(g.tensors()) {
            if theta.len() != grad.len() || state.m[k].len() != grad.len() {
                return Err(Error::DimensionMismatch {
                    context: "adam tensor",
                    expected: theta.len(),
                    found: grad.len(),
                });
            }
            let (m, v) = (&mut state.m[k], &mut state.v[k]);
            for j in 0..grad.len() {
                let gj = grad[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                theta[j] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            k += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_mode_aliases_storage() {
        let mut t = TwoTowerParams::init(TowerMode::One, 4, 2, 0);
        assert!(std::ptr::eq(t.user(), t.item()));
        t.user_mut().b2[0] = 42.0;
        assert_eq!(t.item().b2[0], 42.0);

        let mut s = TwoTowerParams::init(TowerMode::Two, 4, 2, 0);
        assert_ne!(s.user(), s.item());
        s.user_mut().b2[0] = 42.0;
        assert_ne!(s.item().b2[0], 42.0);
    }

    #[test]
    fn hidden_is_half_of_input() {
        let t = TwoTowerParams::init(TowerMode::Two, 3072 / 64, 8, 0);
        assert_eq!(t.user().d_hidden, 24);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut t = TwoTowerParams::init(TowerMode::Two, 4, 2, 0);
        let before = t.clone();
        let mut s = AdamState::new(&t, AdamConfig::default());
        let z = vec![MlpGrads::zeros_like(t.user()), MlpGrads::zeros_like(t.item())];
        adam_step(&mut t, &z, &mut s).unwrap();
        assert_eq!(t, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let mut t = TwoTowerParams::init(TowerMode::Two, 4, 2, 0);
        let mut s = AdamState::new(&t, AdamConfig::default());
        let mut g = vec![MlpGrads::zeros_like(t.user()), MlpGrads::zeros_like(t.item())];
        g[1].w2[0] = f32::INFINITY;
        let err = adam_step(&mut t, &g, &mut s).unwrap_err();
        assert!(err.to_string().contains("item.w2"), "{err}");
        assert_eq!(s.step, 0);
    }

    #[test]
    fn scalar_adam_trace() {
        // One parameter (the single bias b2 of a 1-1-1 MLP), gradient 1 each step.
        let mut t = TwoTowerParams::Shared(MlpParams::zeros(1, 1, 1));
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(&t, cfg);
        let mut g = MlpGrads::zeros_like(t.user());
        g.b2[0] = 1.0;
        adam_step(&mut t, std::slice::from_ref(&g), &mut s).unwrap();
        // m_hat = v_hat = 1, so the step is -lr / (1 + eps).
        assert!((t.user().b2[0] + 0.1).abs() < 1e-6);
        adam_step(&mut t, std::slice::from_ref(&g), &mut s).unwrap();
        assert!((t.user().b2[0] + 0.2).abs() < 1e-6);
    }

    #[test]
    fn combine_sums_in_shared_mode() {
        let t = TwoTowerParams::init(TowerMode::One, 2, 1, 0);
        let mut a = MlpGrads::zeros_like(t.user());
        let mut b = MlpGrads::zeros_like(t.user());
        a.b1[0] = 1.5;
        b.b1[0] = 2.0;
        let c = t.combine_grads(a, b);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].b1[0], 3.5);
    }
}
