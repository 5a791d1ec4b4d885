//! Versioned JSON model document.
//!
//! Weights are flat row-major arrays, one per layer. Floats are written in
//! shortest round-trip form and parsed exactly, so a loaded model reproduces
//! the saved one bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Dense, MlpModel, Normalizer};
use super::MlError;

pub const FORMAT_VERSION: u64 = 1;
const HIDDEN_ACTIVATION: &str = "relu";
const OUTPUT_ACTIVATION: &str = "identity";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format_version: u64,
    layer_sizes: Vec<usize>,
    hidden_activation: String,
    output_activation: String,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

pub fn model_to_json(model: &MlpModel) -> String {
    let doc = ModelDocument {
        format_version: FORMAT_VERSION,
        layer_sizes: model.layer_sizes().to_vec(),
        hidden_activation: HIDDEN_ACTIVATION.into(),
        output_activation: OUTPUT_ACTIVATION.into(),
        weights: model.layers().iter().map(|l| l.weights.clone()).collect(),
        biases: model.layers().iter().map(|l| l.biases.clone()).collect(),
        mu: model.normalizer().mean.clone(),
        sigma: model.normalizer().std.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("model document serialises");
    text.push('\n');
    text
}

pub fn model_from_json(text: &str) -> Result<MlpModel, MlError> {
    let corrupt = |e: serde_json::Error| MlError::CorruptModelFile(e.to_string());
    let value: serde_json::Value = serde_json::from_str(text).map_err(corrupt)?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(MlError::UnsupportedVersion(other)),
        None => return Err(MlError::CorruptModelFile("missing format_version".into())),
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(corrupt)?;
    if doc.hidden_activation != HIDDEN_ACTIVATION || doc.output_activation != OUTPUT_ACTIVATION {
        return Err(MlError::CorruptModelFile(format!(
            "unsupported activations {:?}/{:?}",
            doc.hidden_activation, doc.output_activation
        )));
    }
    let sizes = &doc.layer_sizes;
    if sizes.len() != 4 || sizes.contains(&0) || sizes[3] != 1 {
        return Err(MlError::ShapeMismatch(format!("layer_sizes {sizes:?}")));
    }
    if doc.weights.len() != 3 || doc.biases.len() != 3 {
        return Err(MlError::ShapeMismatch("expected three weight and bias arrays".into()));
    }
    if doc.mu.len() != sizes[0] || doc.sigma.len() != sizes[0] {
        return Err(MlError::ShapeMismatch("mu/sigma length differs from input width".into()));
    }
    if doc.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(MlError::CorruptModelFile("sigma must be positive".into()));
    }
    let mut layers = Vec::with_capacity(3);
    for (k, (w, b)) in doc.weights.into_iter().zip(doc.biases).enumerate() {
        let (inputs, outputs) = (sizes[k], sizes[k + 1]);
        if w.len() != inputs * outputs || b.len() != outputs {
            return Err(MlError::ShapeMismatch(format!(
                "layer {} has {} weights and {} biases, expected {} and {}",
                k + 1,
                w.len(),
                b.len(),
                inputs * outputs,
                outputs
            )));
        }
        layers.push(Dense { inputs, outputs, weights: w, biases: b });
    }
    let layers: [Dense; 3] = layers.try_into().expect("three layers");
    MlpModel::from_parts(layers, Normalizer { mean: doc.mu, std: doc.sigma })
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<(), MlError> {
    fs::write(path, model_to_json(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel, MlError> {
    model_from_json(&fs::read_to_string(path)?)
}
