use super::config::LossWeights;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::raster::{ClassMask, LabelField};

/// Probabilities are clamped to this before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Softmax outputs of every task head, each `N x C_t x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutputs<S> {
    pub probs: Vec<Tensor<S>>,
}

impl<S: Real> TaskOutputs<S> {
    pub fn task_count(&self) -> usize {
        self.probs.len()
    }

    /// Per-pixel argmax of task `task` for batch item `n`; ties go to the
    /// lower class index.
    pub fn predict_mask(&self, task: usize, n: usize) -> Result<ClassMask> {
        let p = self
            .probs
            .get(task)
            .ok_or_else(|| Error::Network(format!("no output for task {task}")))?;
        let hw = p.plane();
        let src = p.sample(n);
        let labels = (0..hw)
            .map(|i| {
                let mut best = 0;
                for c in 1..p.c {
                    if src[c * hw + i] > src[best * hw + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        ClassMask::new(p.h, p.w, p.c, labels)
    }
}

fn check_labels<S: Real>(outputs: &TaskOutputs<S>, labels: &[&LabelField]) -> Result<()> {
    for (t, p) in outputs.probs.iter().enumerate() {
        if labels.len() != p.n {
            return Err(Error::Network(format!(
                "{} label fields for a batch of {}",
                labels.len(),
                p.n
            )));
        }
        for field in labels {
            let Some(mask) = field.get(t) else { continue };
            if mask.dims() != (p.h, p.w) {
                return Err(Error::DimensionMismatch {
                    expected: (p.h, p.w),
                    actual: mask.dims(),
                });
            }
            if mask.classes() != p.c {
                return Err(Error::Network(format!(
                    "task {} label has {} classes, head has {}",
                    t + 1,
                    mask.classes(),
                    p.c
                )));
            }
        }
    }
    Ok(())
}

/// Weighted cross-entropy summed over batch items, pixels and tasks with a
/// label present.
pub fn multitask_loss<S: Real>(
    outputs: &TaskOutputs<S>,
    labels: &[&LabelField],
    weights: &LossWeights,
) -> Result<f64> {
    check_labels(outputs, labels)?;
    let mut total = 0.0;
    for (t, p) in outputs.probs.iter().enumerate() {
        let alpha = weights.get(t);
        if alpha == 0.0 {
            continue;
        }
        let hw = p.plane();
        for (n, field) in labels.iter().enumerate() {
            let Some(mask) = field.get(t) else { continue };
            let src = p.sample(n);
            let sum: f64 = mask
                .labels()
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let q = src[c as usize * hw + i].to_f64().unwrap();
                    -q.max(PROB_FLOOR).ln()
                })
                .sum();
            total += alpha * sum;
        }
    }
    Ok(total)
}

/// Gradient of `scale * loss` with respect to each head's logits, or `None`
/// for heads that receive no gradient.
pub fn head_gradients<S: Real>(
    outputs: &TaskOutputs<S>,
    labels: &[&LabelField],
    weights: &LossWeights,
    scale: f64,
) -> Result<Vec<Option<Tensor<S>>>> {
    check_labels(outputs, labels)?;
    let floor = S::from_f64_lossy(PROB_FLOOR);
    let mut grads = Vec::with_capacity(outputs.task_count());
    for (t, p) in outputs.probs.iter().enumerate() {
        let alpha = weights.get(t);
        if alpha == 0.0 || labels.iter().all(|f| !f.is_present(t)) {
            grads.push(None);
            continue;
        }
        let k = S::from_f64_lossy(alpha * scale);
        let hw = p.plane();
        let len = p.sample_len();
        let mut g = Tensor::zeros_like(p);
        for (n, field) in labels.iter().enumerate() {
            let Some(mask) = field.get(t) else { continue };
            let src = p.sample(n);
            let dst = &mut g.data[n * len..(n + 1) * len];
            for (i, &label) in mask.labels().iter().enumerate() {
                let l = label as usize;
                // below the floor the clamped loss is flat
                if src[l * hw + i] <= floor {
                    continue;
                }
                for c in 0..p.c {
                    dst[c * hw + i] = k * src[c * hw + i];
                }
                dst[l * hw + i] -= k;
            }
        }
        grads.push(Some(g));
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outputs() -> TaskOutputs<f64> {
        // two tasks, 1x2 image, 2 classes
        TaskOutputs {
            probs: vec![
                Tensor::from_vec(1, 2, 1, 2, vec![0.9, 0.2, 0.1, 0.8]),
                Tensor::from_vec(1, 2, 1, 2, vec![0.5, 0.5, 0.5, 0.5]),
            ],
        }
    }

    #[test]
    fn loss_matches_hand_computation() {
        let field = LabelField::new(vec![
            Some(ClassMask::new(1, 2, 2, vec![0, 1]).unwrap()),
            Some(ClassMask::new(1, 2, 2, vec![1, 1]).unwrap()),
        ]);
        let w = LossWeights::new(vec![1.0, 0.5]).unwrap();
        let loss = multitask_loss(&outputs(), &[&field], &w).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) - 0.5 * 2.0 * 0.5f64.ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn absent_task_contributes_nothing() {
        let field = LabelField::new(vec![Some(ClassMask::new(1, 2, 2, vec![0, 1]).unwrap()), None]);
        let w = LossWeights::uniform(2);
        let loss = multitask_loss(&outputs(), &[&field], &w).unwrap();
        assert!((loss + 0.9f64.ln() + 0.8f64.ln()).abs() < 1e-12);
        let g = head_gradients(&outputs(), &[&field], &w, 1.0).unwrap();
        assert!(g[0].is_some() && g[1].is_none());
    }

    #[test]
    fn floor_clamps_loss() {
        let out = TaskOutputs {
            probs: vec![
                Tensor::from_vec(1, 2, 1, 1, vec![1.0, 0.0]),
                Tensor::from_vec(1, 2, 1, 1, vec![1.0, 0.0]),
            ],
        };
        let field = LabelField::new(vec![Some(ClassMask::new(1, 1, 2, vec![1]).unwrap()), None]);
        let w = LossWeights::uniform(2);
        let loss = multitask_loss(&out, &[&field], &w).unwrap();
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-9);
        let g = head_gradients(&out, &[&field], &w, 1.0).unwrap();
        assert!(g[0].as_ref().unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_ties_go_low() {
        let mask = outputs().predict_mask(1, 0).unwrap();
        assert_eq!(mask.labels(), &[0, 0]);
        let mask = outputs().predict_mask(0, 0).unwrap();
        assert_eq!(mask.labels(), &[0, 1]);
    }

    #[test]
    fn wrong_class_count_is_rejected() {
        let field = LabelField::new(vec![Some(ClassMask::new(1, 2, 3, vec![0, 1]).unwrap()), None]);
        assert!(multitask_loss(&outputs(), &[&field], &LossWeights::uniform(2)).is_err());
    }
}
