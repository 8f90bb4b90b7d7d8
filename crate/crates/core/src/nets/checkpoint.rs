//! Flat JSON checkpoints: layer shapes, row-major weights, normalization
//! constants and the hash of the configuration that produced them.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Layer, MlpParams, OutputMap};
use crate::{lit, to_f64, Error, Result, Scalar};

pub const CHECKPOINT_FORMAT: &str = "cacto-networks-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols` weights.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputRecord {
    Linear { scale: f64, offset: f64 },
    ScaledTanh { bound: Vec<f64> },
    PositiveSoftplus { scale: f64, floor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub activation: Activation,
    pub output: OutputRecord,
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: String,
    pub config_hash: String,
    pub iteration: usize,
    pub actor: NetworkRecord,
    pub critic: NetworkRecord,
    pub std_critic: NetworkRecord,
}

fn vec_f64<T: Scalar>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|&x| to_f64(x)).collect()
}

impl NetworkRecord {
    pub fn from_params<T: Scalar>(params: &MlpParams<T>) -> Self {
        let output = match &params.output {
            OutputMap::Linear { scale, offset } => OutputRecord::Linear {
                scale: to_f64(*scale),
                offset: to_f64(*offset),
            },
            OutputMap::ScaledTanh { bound } => OutputRecord::ScaledTanh { bound: vec_f64(bound) },
            OutputMap::PositiveSoftplus { scale, floor } => OutputRecord::PositiveSoftplus {
                scale: to_f64(*scale),
                floor: to_f64(*floor),
            },
        };
        Self {
            activation: params.activation,
            output,
            input_offset: vec_f64(&params.input_offset),
            input_scale: vec_f64(&params.input_scale),
            layers: params
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weights: l.weight.transpose().iter().map(|&x| to_f64(x)).collect(),
                    bias: vec_f64(&l.bias),
                })
                .collect(),
        }
    }

    pub fn to_params<T: Scalar>(&self) -> Result<MlpParams<T>> {
        let dv = |v: &[f64]| DVector::from_iterator(v.len(), v.iter().map(|&x| lit::<T>(x)));
        if self.layers.is_empty() {
            return Err(Error::Format("network has no layers".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Format(format!("layer {i} has inconsistent shape")));
            }
            if i > 0 && self.layers[i - 1].rows != l.cols {
                return Err(Error::Format(format!("layer {i} does not chain with layer {}", i - 1)));
            }
            layers.push(Layer {
                weight: DMatrix::from_row_iterator(l.rows, l.cols, l.weights.iter().map(|&x| lit::<T>(x))),
                bias: dv(&l.bias),
            });
        }
        let input_dim = self.layers[0].cols;
        if self.input_offset.len() != input_dim || self.input_scale.len() != input_dim {
            return Err(Error::Format("normalization constants do not match the input size".into()));
        }
        let output = match &self.output {
            OutputRecord::Linear { scale, offset } => OutputMap::Linear {
                scale: lit(*scale),
                offset: lit(*offset),
            },
            OutputRecord::ScaledTanh { bound } => OutputMap::ScaledTanh { bound: dv(bound) },
            OutputRecord::PositiveSoftplus { scale, floor } => OutputMap::PositiveSoftplus {
                scale: lit(*scale),
                floor: lit(*floor),
            },
        };
        Ok(MlpParams {
            layers,
            activation: self.activation,
            output,
            input_offset: dv(&self.input_offset),
            input_scale: dv(&self.input_scale),
        })
    }
}

impl Checkpoint {
    pub fn new<T: Scalar>(
        model: &str,
        config_hash: &str,
        iteration: usize,
        actor: &MlpParams<T>,
        critic: &MlpParams<T>,
        std_critic: &MlpParams<T>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            model: model.to_string(),
            config_hash: config_hash.to_string(),
            iteration,
            actor: NetworkRecord::from_params(actor),
            critic: NetworkRecord::from_params(critic),
            std_critic: NetworkRecord::from_params(std_critic),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format '{}'", ckpt.format)));
        }
        Ok(ckpt)
    }
}
