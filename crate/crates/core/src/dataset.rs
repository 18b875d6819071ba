//! Labeled, epoched multi-channel windows.

use bwnet_tensor::Tensor;

use crate::error::{CoreError, Result};

/// Windows `x` of shape `[N, C, L, 1]` with one class label and one
/// subject tag per window.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochedDataset {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub subjects: Vec<u16>,
    pub sample_rate: f32,
}

impl EpochedDataset {
    pub fn new(x: Tensor, labels: Vec<usize>, subjects: Vec<u16>, sample_rate: f32) -> Result<Self> {
        if x.ndim() != 4 || x.dim(3) != 1 {
            return Err(CoreError::InvalidArgument(format!(
                "windows must be [N, C, L, 1], got {:?}",
                x.shape()
            )));
        }
        if labels.len() != x.dim(0) || subjects.len() != x.dim(0) {
            return Err(CoreError::InvalidArgument(format!(
                "{} windows but {} labels and {} subject tags",
                x.dim(0),
                labels.len(),
                subjects.len()
            )));
        }
        Ok(EpochedDataset {
            x,
            labels,
            subjects,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.x.dim(1)
    }

    pub fn window_len(&self) -> usize {
        self.x.dim(2)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// The windows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(EpochedDataset {
            x: self.x.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i]).collect(),
            sample_rate: self.sample_rate,
        })
    }

    /// Keeps only the listed channels, in the listed order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        let (n, c, l) = (self.len(), self.channels(), self.window_len());
        if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
            return Err(CoreError::InvalidArgument(format!("channel {bad} out of range for {c} channels")));
        }
        let mut data = Vec::with_capacity(n * channels.len() * l);
        for i in 0..n {
            for &ch in channels {
                data.extend_from_slice(&self.x.data()[(i * c + ch) * l..][..l]);
            }
        }
        Ok(EpochedDataset {
            x: Tensor::new(&[n, channels.len(), l, 1], data)?,
            labels: self.labels.clone(),
            subjects: self.subjects.clone(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn subject_indices(&self, subject: u16) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.subjects[i] == subject).collect()
    }
}
