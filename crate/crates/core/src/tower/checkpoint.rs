//! Checkpoint directory: `manifest.json` plus one `TGE1` file per tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{MlpParams, TENSOR_NAMES};
use super::{AdamConfig, AdamState, TowerMode, TwoTowerParams};
use crate::embed::{load_matrix, save_matrix, EmbeddingMatrix};
use crate::error::{Error, Result};

const FORMAT: &str = "textgcn-checkpoint";
const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    mode: TowerMode,
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
    adam: AdamConfig,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

/// Free-form run metadata carried alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub sources: Vec<String>,
    /// Training configuration as it was resolved for the run.
    pub config: serde_json::Value,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: TwoTowerParams,
    pub adam: AdamState,
    pub meta: CheckpointMeta,
}

fn write_tensor(dir: &Path, name: &str, rows: usize, cols: usize, data: &[f32]) -> Result<TensorEntry> {
    let file = format!("{name}.tge");
    let m = EmbeddingMatrix::from_vec(rows, cols, data.to_vec())?;
    save_matrix(&m, &dir.join(&file))?;
    Ok(TensorEntry {
        name: name.to_owned(),
        file,
        rows,
        cols,
    })
}

pub fn save_checkpoint(dir: &Path, params: &TwoTowerParams, adam: &AdamState, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    let mut k = 0;
    for (prefix, p) in params.mlps() {
        for ((t, tname), (rows, cols)) in p.tensors().iter().zip(TENSOR_NAMES).zip(p.shapes()) {
            tensors.push(write_tensor(dir, &format!("{prefix}.{tname}"), rows, cols, t)?);
            tensors.push(write_tensor(dir, &format!("adam.m.{prefix}.{tname}"), rows, cols, &adam.m[k])?);
            tensors.push(write_tensor(dir, &format!("adam.v.{prefix}.{tname}"), rows, cols, &adam.v[k])?);
            k += 1;
        }
    }
    let u = params.user();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        mode: params.mode(),
        d_in: u.d_in,
        d_hidden: u.d_hidden,
        d_out: u.d_out,
        adam: adam.config,
        adam_step: adam.step,
        tensors,
        meta: meta.clone(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let read = |name: &str, rows: usize, cols: usize| -> Result<Vec<f32>> {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        let m = load_matrix(&dir.join(&entry.file))?;
        if (m.n_rows(), m.dim()) != (rows, cols) || (entry.rows, entry.cols) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {}x{}, expected {rows}x{cols}",
                m.n_rows(),
                m.dim()
            )));
        }
        Ok(m.into_vec())
    };
    let load_mlp = |prefix: &str, m: &mut Vec<Vec<f32>>, v: &mut Vec<Vec<f32>>| -> Result<MlpParams> {
        let mut p = MlpParams::zeros(manifest.d_in, manifest.d_hidden, manifest.d_out);
        let shapes = p.shapes();
        for ((t, tname), (rows, cols)) in p.tensors_mut().into_iter().zip(TENSOR_NAMES).zip(shapes) {
            *t = read(&format!("{prefix}.{tname}"), rows, cols)?;
            m.push(read(&format!("adam.m.{prefix}.{tname}"), rows, cols)?);
            v.push(read(&format!("adam.v.{prefix}.{tname}"), rows, cols)?);
        }
        Ok(p)
    };
    let (mut m, mut v) = (Vec::new(), Vec::new());
    let params = match manifest.mode {
        TowerMode::One => TwoTowerParams::Shared(load_mlp("shared", &mut m, &mut v)?),
        TowerMode::Two => TwoTowerParams::Separate {
            user: load_mlp("user", &mut m, &mut v)?,
            item: load_mlp("item", &mut m, &mut v)?,
        },
    };
    Ok(Checkpoint {
        params,
        adam: AdamState {
            config: manifest.adam,
            step: manifest.adam_step,
            m,
            v,
        },
        meta: manifest.meta,
    })
}

/// Loads a checkpoint and checks that it accepts `d_in`-dimensional inputs.
pub fn load_checkpoint_for(dir: &Path, d_in: usize) -> Result<Checkpoint> {
    let ck = load_checkpoint(dir)?;
    if ck.params.d_in() != d_in {
        return Err(Error::CheckpointDimMismatch {
            expected: d_in,
            found: ck.params.d_in(),
        });
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::{adam_step, mlp_apply, MlpGrads};

    fn trained(mode: TowerMode) -> (TwoTowerParams, AdamState) {
        let mut p = TwoTowerParams::init(mode, 6, 2, 11);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let mut g: Vec<MlpGrads> = p.mlps().iter().map(|(_, m)| MlpGrads::zeros_like(m)).collect();
        g.iter_mut().for_each(|g| g.w1.iter_mut().enumerate().for_each(|(i, x)| *x = i as f32 * 0.01));
        adam_step(&mut p, &g, &mut s).unwrap();
        (p, s)
    }

    #[test]
    fn round_trip_preserves_outputs_bitwise() {
        for mode in [TowerMode::One, TowerMode::Two] {
            let dir = tempfile::tempdir().unwrap();
            let (p, s) = trained(mode);
            let meta = CheckpointMeta {
                seed: 5,
                sources: vec!["a".into()],
                ..Default::default()
            };
            save_checkpoint(dir.path(), &p, &s, &meta).unwrap();
            let ck = load_checkpoint(dir.path()).unwrap();
            assert_eq!(ck.params, p);
            assert_eq!(ck.adam, s);
            assert_eq!(ck.meta, meta);
            let probe = EmbeddingMatrix::from_rows(&[[0.1f32, -0.4, 0.3, 0.9, -0.2, 0.5]]).unwrap();
            assert_eq!(
                mlp_apply(ck.params.item(), &probe).unwrap().to_bytes(),
                mlp_apply(p.item(), &probe).unwrap().to_bytes()
            );
        }
    }

    #[test]
    fn one_tower_load_aliases() {
        let dir = tempfile::tempdir().unwrap();
        let (p, s) = trained(TowerMode::One);
        save_checkpoint(dir.path(), &p, &s, &CheckpointMeta::default()).unwrap();
        let mut ck = load_checkpoint(dir.path()).unwrap();
        ck.params.item_mut().b1[0] = -3.0;
        assert_eq!(ck.params.user().b1[0], -3.0);
    }

    #[test]
    fn wrong_input_dim_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (p, s) = trained(TowerMode::Two);
        save_checkpoint(dir.path(), &p, &s, &CheckpointMeta::default()).unwrap();
        let err = load_checkpoint_for(dir.path(), 7).unwrap_err();
        assert!(err.to_string().contains("checkpoint dimension mismatch"));
        assert!(load_checkpoint_for(dir.path(), 6).is_ok());
    }

    #[test]
    fn reshaped_tensor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (p, s) = trained(TowerMode::Two);
        save_checkpoint(dir.path(), &p, &s, &CheckpointMeta::default()).unwrap();
        save_matrix(&EmbeddingMatrix::zeros(2, 2), &dir.path().join("user.w2.tge")).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    }
}
