use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Hidden width of the pairwise scorer when none is declared.
pub fn default_hidden(dim: usize) -> usize {
    (dim / 4).max(8)
}

/// Every learnable array of the association module.
///
/// Channel vectors are row vectors: a token `x` projects to `x · w_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineWeights<T> {
    pub dim: usize,
    pub hidden: usize,
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    /// `dim x hidden`
    pub conv1: Matrix<T>,
    pub conv1_bias: Vec<T>,
    pub bn_scale: Vec<T>,
    pub bn_shift: Vec<T>,
    pub bn_mean: Vec<T>,
    /// Inference-mode running variance; any epsilon is folded in already.
    pub bn_var: Vec<T>,
    /// `hidden x 1`
    pub conv2: Matrix<T>,
    pub conv2_bias: T,
    pub w_p: Matrix<T>,
}

impl<T: Scalar> PipelineWeights<T> {
    /// Identity projections, pass-through batch norm, zero scorer.
    pub fn identity(dim: usize, hidden: usize) -> Self {
        PipelineWeights {
            dim,
            hidden,
            w_q: Matrix::identity(dim),
            w_k: Matrix::identity(dim),
            w_v: Matrix::identity(dim),
            conv1: Matrix::zeros(dim, hidden),
            conv1_bias: vec![T::zero(); hidden],
            bn_scale: vec![T::one(); hidden],
            bn_shift: vec![T::zero(); hidden],
            bn_mean: vec![T::zero(); hidden],
            bn_var: vec![T::one(); hidden],
            conv2: Matrix::zeros(hidden, 1),
            conv2_bias: T::zero(),
            w_p: Matrix::identity(dim),
        }
    }

    /// Hand-set weights under which the module scores pairs by scaled dot
    /// product: hidden channels 0 and 1 carry `+<q,k>` and `-<q,k>`, and the
    /// output recombines them as `(relu(s) - relu(-s)) / sqrt(dim)`. The
    /// refined token keeps half of the attended value (`w_p = I / 2`).
    pub fn association(dim: usize) -> Self {
        let hidden = default_hidden(dim);
        let mut w = Self::identity(dim, hidden);
        for d in 0..dim {
            w.conv1[(d, 0)] = T::one();
            w.conv1[(d, 1)] = -T::one();
        }
        let scale = T::one() / T::of(dim as f64).sqrt();
        w.conv2[(0, 0)] = scale;
        w.conv2[(1, 0)] = -scale;
        w.w_p = Matrix::identity(dim).scale(T::of(0.5));
        w
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.dim, self.hidden);
        let bad = |what: &str| Err(Error::InvalidWeights(what.to_string()));
        if d == 0 || h == 0 {
            return bad("D and C_h must be positive");
        }
        for (name, m) in [
            ("W_q", &self.w_q),
            ("W_k", &self.w_k),
            ("W_v", &self.w_v),
            ("W_p", &self.w_p),
        ] {
            if m.shape() != (d, d) {
                return Err(Error::InvalidWeights(format!(
                    "{name} is {}x{}, expected {d}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if self.conv1.shape() != (d, h) {
            return bad("conv1 must be D x C_h");
        }
        if self.conv2.shape() != (h, 1) {
            return bad("conv2 must be C_h x 1");
        }
        for (name, v) in [
            ("conv1_bias", &self.conv1_bias),
            ("bn_scale", &self.bn_scale),
            ("bn_shift", &self.bn_shift),
            ("bn_mean", &self.bn_mean),
            ("bn_var", &self.bn_var),
        ] {
            if v.len() != h {
                return Err(Error::InvalidWeights(format!(
                    "{name} has {} entries, expected {h}",
                    v.len()
                )));
            }
        }
        if let Some(channel) = self.bn_var.iter().position(|&v| !(v > T::zero())) {
            return Err(Error::BatchNormVariance { channel });
        }
        let all_finite = [&self.w_q, &self.w_k, &self.w_v, &self.conv1, &self.conv2, &self.w_p]
            .iter()
            .all(|m| m.as_slice().iter().all(|v| v.is_finite()))
            && self.conv2_bias.is_finite();
        if !all_finite {
            return bad("non-finite weight");
        }
        Ok(())
    }

    pub fn from_file(file: &WeightFile) -> Result<Self> {
        let matrix = |name: &str, rows: &[Vec<f64>]| -> Result<Matrix<T>> {
            let data: Vec<Vec<T>> = rows.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect();
            Matrix::from_rows(&data).map_err(|_| Error::InvalidWeights(format!("{name} is ragged")))
        };
        let vector = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        if file.conv2_bias.len() != 1 {
            return Err(Error::InvalidWeights("conv2_bias must hold one value".into()));
        }
        let w = PipelineWeights {
            dim: file.dim,
            hidden: file.hidden,
            w_q: matrix("W_q", &file.w_q)?,
            w_k: matrix("W_k", &file.w_k)?,
            w_v: matrix("W_v", &file.w_v)?,
            conv1: matrix("conv1", &file.conv1)?,
            conv1_bias: vector(&file.conv1_bias),
            bn_scale: vector(&file.bn_scale),
            bn_shift: vector(&file.bn_shift),
            bn_mean: vector(&file.bn_mean),
            bn_var: vector(&file.bn_var),
            conv2: matrix("conv2", &file.conv2)?,
            conv2_bias: T::of(file.conv2_bias[0]),
            w_p: matrix("W_p", &file.w_p)?,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn to_file(&self) -> WeightFile {
        let nested = |m: &Matrix<T>| -> Vec<Vec<f64>> {
            (0..m.rows())
                .map(|i| m.row(i).iter().map(|v| v.as_f64()).collect())
                .collect()
        };
        let flat = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        WeightFile {
            dim: self.dim,
            hidden: self.hidden,
            w_q: nested(&self.w_q),
            w_k: nested(&self.w_k),
            w_v: nested(&self.w_v),
            conv1: nested(&self.conv1),
            conv1_bias: flat(&self.conv1_bias),
            bn_scale: flat(&self.bn_scale),
            bn_shift: flat(&self.bn_shift),
            bn_mean: flat(&self.bn_mean),
            bn_var: flat(&self.bn_var),
            conv2: nested(&self.conv2),
            conv2_bias: vec![self.conv2_bias.as_f64()],
            w_p: nested(&self.w_p),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("weights serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// On-disk JSON layout: named row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightFile {
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "C_h")]
    pub hidden: usize,
    #[serde(rename = "W_q")]
    pub w_q: Vec<Vec<f64>>,
    #[serde(rename = "W_k")]
    pub w_k: Vec<Vec<f64>>,
    #[serde(rename = "W_v")]
    pub w_v: Vec<Vec<f64>>,
    pub conv1: Vec<Vec<f64>>,
    pub conv1_bias: Vec<f64>,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
    pub conv2: Vec<Vec<f64>>,
    pub conv2_bias: Vec<f64>,
    #[serde(rename = "W_p")]
    pub w_p: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip() {
        let w = PipelineWeights::<f64>::association(12);
        let back = PipelineWeights::<f64>::from_json(&w.to_json()).unwrap();
        assert_eq!(w, back);
        assert_eq!(back.hidden, 8);
    }

    #[test]
    fn file_uses_declared_key_names() {
        let json = PipelineWeights::<f64>::identity(2, 1).to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in [
            "D",
            "C_h",
            "W_q",
            "W_k",
            "W_v",
            "conv1",
            "conv1_bias",
            "bn_scale",
            "bn_shift",
            "bn_mean",
            "bn_var",
            "conv2",
            "conv2_bias",
            "W_p",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["conv2"], serde_json::json!([[0.0]]));
    }

    #[test]
    fn loader_rejects_bad_shapes() {
        let mut f = PipelineWeights::<f64>::identity(3, 2).to_file();
        f.w_k.pop();
        assert!(matches!(
            PipelineWeights::<f64>::from_file(&f),
            Err(Error::InvalidWeights(_))
        ));

        let mut f = PipelineWeights::<f64>::identity(3, 2).to_file();
        f.bn_var[1] = 0.0;
        assert!(matches!(
            PipelineWeights::<f64>::from_file(&f),
            Err(Error::BatchNormVariance { channel: 1 })
        ));

        let mut f = PipelineWeights::<f64>::identity(3, 2).to_file();
        f.conv1[0].push(1.0);
        assert!(PipelineWeights::<f64>::from_file(&f).is_err());

        let mut f = PipelineWeights::<f64>::identity(3, 2).to_file();
        f.hidden = 3;
        assert!(PipelineWeights::<f64>::from_file(&f).is_err());
    }
}
