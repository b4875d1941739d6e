//! Model checkpoints as JSON.
//!
//! Layout: `{"format_version":1,"config":{...},"layers":[{"lift":{...},
//! "kernel":{...},"bias":[...],"local_w":[[...]]|null}],"projection":{...}}`
//! with weight matrices as row-major nested decimal arrays. Each layer's
//! kernel is a single net whose output splits into the `c×c` matrix part
//! and the `c`-vector bias part of the integral kernel. The loader
//! validates every shape against the config before accepting parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ffn::Ffn;
use super::model::{GnoConfig, GnoModel, Layout};
use super::GnoError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct FfnJson {
    dims: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerJson {
    lift: FfnJson,
    kernel: FfnJson,
    bias: Vec<f64>,
    local_w: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointJson {
    format_version: u32,
    config: GnoConfig,
    layers: Vec<LayerJson>,
    projection: FfnJson,
}

fn ffn_to_json(ffn: &Ffn, params: &[f64]) -> FfnJson {
    let mut weights = Vec::with_capacity(ffn.layer_count());
    let mut biases = Vec::with_capacity(ffn.layer_count());
    for l in 0..ffn.layer_count() {
        let (rows, cols) = ffn.layer_shape(l);
        let (w, b) = ffn.layer_slices(params, l);
        weights.push(w.chunks(cols).map(|r| r.to_vec()).collect::<Vec<_>>());
        debug_assert_eq!(weights.last().unwrap().len(), rows);
        biases.push(b.to_vec());
    }
    FfnJson { dims: ffn.dims.clone(), weights, biases }
}

fn ffn_from_json(ffn: &Ffn, json: &FfnJson, params: &mut [f64], what: &str) -> Result<(), GnoError> {
    if json.dims != ffn.dims {
        return Err(GnoError::Checkpoint(format!(
            "{what}: dims {:?} do not match expected {:?}",
            json.dims, ffn.dims
        )));
    }
    if json.weights.len() != ffn.layer_count() || json.biases.len() != ffn.layer_count() {
        return Err(GnoError::Checkpoint(format!("{what}: wrong layer count")));
    }
    for l in 0..ffn.layer_count() {
        let (rows, cols) = ffn.layer_shape(l);
        let wj = &json.weights[l];
        let bj = &json.biases[l];
        if wj.len() != rows || wj.iter().any(|r| r.len() != cols) || bj.len() != rows {
            return Err(GnoError::Checkpoint(format!(
                "{what}: layer {l} shape mismatch (want {rows}x{cols})"
            )));
        }
        let (w, b) = ffn.layer_slices_mut(params, l);
        for (dst, row) in w.chunks_mut(cols).zip(wj) {
            dst.copy_from_slice(row);
        }
        b.copy_from_slice(bj);
    }
    Ok(())
}

/// Serialize a model to the checkpoint JSON string.
pub fn checkpoint_to_json(model: &GnoModel) -> String {
    let layout = &model.layout;
    let c = model.config.channels;
    let mut layers = Vec::with_capacity(model.config.layers);
    for j in 0..model.config.layers {
        let (off, lift) = &layout.lifts[j];
        let lift_json = ffn_to_json(lift, &model.params[*off..off + lift.param_len]);
        let (off, kernel) = &layout.kernels[j];
        let kernel_json = ffn_to_json(kernel, &model.params[*off..off + kernel.param_len]);
        let b_off = layout.biases[j];
        let bias = model.params[b_off..b_off + c].to_vec();
        let local_w = layout.locals[j].map(|w_off| {
            model.params[w_off..w_off + c * c]
                .chunks(c)
                .map(|r| r.to_vec())
                .collect()
        });
        layers.push(LayerJson { lift: lift_json, kernel: kernel_json, bias, local_w });
    }
    let (off, proj) = &layout.projection;
    let projection = ffn_to_json(proj, &model.params[*off..off + proj.param_len]);
    serde_json::to_string(&CheckpointJson {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: model.config,
        layers,
        projection,
    })
    .expect("checkpoint serialization cannot fail")
}

/// Parse a checkpoint JSON string into a model, validating all shapes.
pub fn checkpoint_from_json(text: &str) -> Result<GnoModel, GnoError> {
    let json: CheckpointJson =
        serde_json::from_str(text).map_err(|e| GnoError::Checkpoint(e.to_string()))?;
    if json.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(GnoError::Checkpoint(format!(
            "unsupported format_version {}",
            json.format_version
        )));
    }
    json.config.validate()?;
    let layout = Layout::new(&json.config);
    if json.layers.len() != json.config.layers {
        return Err(GnoError::Checkpoint(format!(
            "expected {} layers, found {}",
            json.config.layers,
            json.layers.len()
        )));
    }
    let c = json.config.channels;
    let mut params = vec![0.0; layout.total];
    for (j, layer) in json.layers.iter().enumerate() {
        let (off, lift) = &layout.lifts[j];
        ffn_from_json(lift, &layer.lift, &mut params[*off..off + lift.param_len],
            &format!("lift {j}"))?;
        let (off, kernel) = &layout.kernels[j];
        ffn_from_json(kernel, &layer.kernel, &mut params[*off..off + kernel.param_len],
            &format!("kernel {j}"))?;
        if layer.bias.len() != c {
            return Err(GnoError::Checkpoint(format!("layer {j}: bias length")));
        }
        let b_off = layout.biases[j];
        params[b_off..b_off + c].copy_from_slice(&layer.bias);
        match (&layer.local_w, layout.locals[j]) {
            (Some(w), Some(w_off)) => {
                if w.len() != c || w.iter().any(|r| r.len() != c) {
                    return Err(GnoError::Checkpoint(format!("layer {j}: local_w shape")));
                }
                for (dst, row) in params[w_off..w_off + c * c].chunks_mut(c).zip(w) {
                    dst.copy_from_slice(row);
                }
            }
            (None, None) => {}
            _ => {
                return Err(GnoError::Checkpoint(format!(
                    "layer {j}: local_w presence does not match layer index"
                )));
            }
        }
    }
    let (off, proj) = &layout.projection;
    ffn_from_json(proj, &json.projection, &mut params[*off..off + proj.param_len], "projection")?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(GnoError::Checkpoint("non-finite parameter".into()));
    }
    Ok(GnoModel { config: json.config, layout, params })
}

/// Write a checkpoint file.
pub fn save_checkpoint(model: &GnoModel, path: &Path) -> std::io::Result<()> {
    fs::write(path, checkpoint_to_json(model))
}

/// Read a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<GnoModel, GnoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| GnoError::Checkpoint(format!("{}: {e}", path.display())))?;
    checkpoint_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> GnoConfig {
        GnoConfig {
            layers: 2,
            channels: 4,
            lift_hidden: 8,
            kernel_hidden: 8,
            neighbor_cap: 3,
            ..GnoConfig::default()
        }
    }

    #[test]
    fn round_trip_preserves_parameters_exactly() {
        let model = GnoModel::new(tiny_config(), 31).unwrap();
        let text = checkpoint_to_json(&model);
        let loaded = checkpoint_from_json(&text).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.params.len(), model.params.len());
        for (a, b) in model.params.iter().zip(&loaded.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn serialization_is_deterministic() {
        let model = GnoModel::new(tiny_config(), 31).unwrap();
        assert_eq!(checkpoint_to_json(&model), checkpoint_to_json(&model));
    }

    #[test]
    fn corrupt_shapes_rejected() {
        let model = GnoModel::new(tiny_config(), 31).unwrap();
        let text = checkpoint_to_json(&model);
        let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
        json["layers"][0]["bias"] = serde_json::json!([0.0, 0.0]);
        assert!(checkpoint_from_json(&json.to_string()).is_err());

        let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
        json["format_version"] = serde_json::json!(2);
        assert!(checkpoint_from_json(&json.to_string()).is_err());

        let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
        json["layers"][0]["local_w"] = serde_json::json!([[1.0]]);
        assert!(checkpoint_from_json(&json.to_string()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = GnoModel::new(tiny_config(), 77).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, model.params);
    }
}
