use crate::config::parse_value;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    Batch,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "batch" => Ok(Normalization::Batch),
            "none" => Ok(Normalization::None),
            other => Err(format!("expected `batch` or `none`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Normalization::Batch => "batch",
            Normalization::None => "none",
        })
    }
}

/// Shape of the multi-task encoder-decoder.
///
/// Task 0 is segmentation and task 1 is the approximation task; further
/// tasks are auxiliary and read from the segmentation path.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    /// Number of spatial resolutions on the contracting path.
    pub levels: usize,
    pub base_channels: usize,
    /// Classes per task, background last.
    pub task_classes: Vec<usize>,
    /// How many of the finest expansive-path blocks are multi-task blocks.
    pub multitask_blocks: usize,
    pub normalization: Normalization,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 1,
            levels: 4,
            base_channels: 8,
            task_classes: vec![3, 3, 2],
            multitask_blocks: 2,
            normalization: Normalization::Batch,
            leaky_slope: 0.01,
        }
    }
}

impl NetworkConfig {
    /// Six resolutions and four multi-task blocks, as in the full-size model.
    pub fn full_scale(task_classes: Vec<usize>) -> Self {
        NetworkConfig {
            levels: 6,
            base_channels: 32,
            multitask_blocks: 4,
            task_classes,
            ..Default::default()
        }
    }

    pub fn task_count(&self) -> usize {
        self.task_classes.len()
    }

    /// Keys settable from a run config. Channels and task classes follow
    /// the dataset.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("levels", self.levels.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("multitask_blocks", self.multitask_blocks.to_string()),
            ("normalization", self.normalization.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
        ]
    }

    /// Sets one field from text. Returns `false` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "levels" => self.levels = parse_value(key, value)?,
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "multitask_blocks" => self.multitask_blocks = parse_value(key, value)?,
            "normalization" => self.normalization = parse_value(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input height and width must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Network(m));
        if self.levels < 2 {
            return fail(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.multitask_blocks < 1 || self.multitask_blocks > self.levels - 1 {
            return fail(format!(
                "multitask_blocks must be in 1..={}, got {}",
                self.levels - 1,
                self.multitask_blocks
            ));
        }
        if self.task_count() < 2 {
            return fail(format!("need at least 2 tasks, got {}", self.task_count()));
        }
        if let Some(c) = self.task_classes.iter().find(|&&c| c < 2) {
            return fail(format!("every task needs >= 2 classes, got {c}"));
        }
        if self.in_channels == 0 || self.base_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return fail(format!("invalid leaky slope {}", self.leaky_slope));
        }
        Ok(())
    }
}

/// Nonnegative per-task loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights(Vec<f64>);

impl LossWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::config("alphas", "weights must be finite and >= 0"));
        }
        if alphas.iter().all(|&a| a == 0.0) {
            return Err(Error::config("alphas", "at least one weight must be positive"));
        }
        Ok(LossWeights(alphas))
    }

    pub fn uniform(tasks: usize) -> Self {
        LossWeights(vec![1.0; tasks])
    }

    pub fn get(&self, task: usize) -> f64 {
        self.0.get(task).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        let bad = NetworkConfig {
            levels: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NetworkConfig {
            multitask_blocks: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NetworkConfig {
            task_classes: vec![2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(NetworkConfig::full_scale(vec![3, 3, 2]).validate().is_ok());
    }

    #[test]
    fn weights() {
        assert!(LossWeights::new(vec![0.0, 0.0]).is_err());
        assert!(LossWeights::new(vec![-1.0, 1.0]).is_err());
        assert_eq!(LossWeights::new(vec![0.0, 2.0]).unwrap().get(1), 2.0);
    }
}
