//! Gradient transforms driven by accumulated importance.

use alloc::format;
use alloc::vec::Vec;

use crate::importance::ImportanceState;
use crate::nn::{GradientSet, GradientTransform, LayerParams};
use crate::{Error, Result};

/// Thresholds searched for the hard-mask variant.
pub const HARD_MASK_THRESHOLDS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Default tolerance for counting a parameter as fully blocked.
pub const BLOCKED_EPS: f64 = 1e-6;

fn check_state_shape(grads: &GradientSet, per_layer: &[Vec<f64>]) -> Result<()> {
    let ok = grads.len() == per_layer.len()
        && grads.layers().iter().zip(per_layer).all(|(g, m)| g.len() == m.len());
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "gradient layers {:?} vs mask layers {:?}",
            grads.layers().iter().map(LayerParams::len).collect::<Vec<_>>(),
            per_layer.iter().map(Vec::len).collect::<Vec<_>>()
        )))
    }
}

/// `g' = (1 - γ) g` per extractor parameter.
pub fn soft_mask_extractor(grads: &GradientSet, state: &ImportanceState) -> Result<GradientSet> {
    check_state_shape(grads, state.per_layer())?;
    let layers = grads
        .layers()
        .iter()
        .zip(state.per_layer())
        .map(|(g, gamma)| g.zip_flat(gamma, |g, y| (1.0 - y) * g))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientSet::new(layers))
}

/// Uniform `g' = (1 - mean) g` for the current head.
pub fn soft_mask_head(head_grads: &LayerParams, mean_importance: f64) -> Result<LayerParams> {
    if !(0.0..1.0).contains(&mean_importance) {
        return Err(Error::InvalidArgument(format!(
            "mean importance must be in [0, 1), got {mean_importance}"
        )));
    }
    let scale = 1.0 - mean_importance;
    Ok(head_grads.map(|g| scale * g))
}

/// [`soft_mask_extractor`] as an SGD hook.
#[derive(Debug, Clone, Copy)]
pub struct SoftMask<'a>(pub &'a ImportanceState);

impl GradientTransform for SoftMask<'_> {
    fn transform(&self, grads: GradientSet) -> Result<GradientSet> {
        soft_mask_extractor(&grads, self.0)
    }
}

/// [`soft_mask_head`] as an SGD hook over every layer it is given.
#[derive(Debug, Clone, Copy)]
pub struct HeadMask(pub f64);

impl GradientTransform for HeadMask {
    fn transform(&self, grads: GradientSet) -> Result<GradientSet> {
        let layers = grads
            .layers()
            .iter()
            .map(|g| soft_mask_head(g, self.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(GradientSet::new(layers))
    }
}

/// Binary mask: 1 blocks the parameter, 0 leaves it free.
#[derive(Debug, Clone, PartialEq)]
pub struct HardMask {
    per_layer: Vec<Vec<bool>>,
}

/// Block every parameter whose importance exceeds `threshold`.
pub fn harden(state: &ImportanceState, threshold: f64) -> Result<HardMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "hard-mask threshold must be in (0, 1), got {threshold}"
        )));
    }
    Ok(HardMask {
        per_layer: state
            .per_layer()
            .iter()
            .map(|l| l.iter().map(|&g| g > threshold).collect())
            .collect(),
    })
}

impl HardMask {
    pub fn per_layer(&self) -> &[Vec<bool>] {
        &self.per_layer
    }

    /// `g' = (1 - mask) g`.
    pub fn apply(&self, grads: &GradientSet) -> Result<GradientSet> {
        let as_f: Vec<Vec<f64>> = self
            .per_layer
            .iter()
            .map(|l| l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .collect();
        check_state_shape(grads, &as_f)?;
        let layers = grads
            .layers()
            .iter()
            .zip(&as_f)
            .map(|(g, m)| g.zip_flat(m, |g, b| (1.0 - b) * g))
            .collect::<Result<Vec<_>>>()?;
        Ok(GradientSet::new(layers))
    }

    /// Fraction of blocked parameters over the whole extractor.
    pub fn blocked_fraction(&self) -> f64 {
        let n: usize = self.per_layer.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.per_layer.iter().flatten().filter(|&&b| b).count() as f64 / n as f64
    }
}

impl GradientTransform for HardMask {
    fn transform(&self, grads: GradientSet) -> Result<GradientSet> {
        self.apply(&grads)
    }
}

/// Share of parameters whose importance is saturated.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockedFraction {
    pub per_layer: Vec<f64>,
    pub total: f64,
}

/// Fraction of entries with `γ ≥ 1 - eps`, per layer and overall.
pub fn blocked_fraction(state: &ImportanceState, eps: f64) -> BlockedFraction {
    let cut = 1.0 - eps;
    let mut blocked_total = 0usize;
    let mut n_total = 0usize;
    let per_layer = state
        .per_layer()
        .iter()
        .map(|l| {
            let k = l.iter().filter(|&&g| g >= cut).count();
            blocked_total += k;
            n_total += l.len();
            if l.is_empty() {
                0.0
            } else {
                k as f64 / l.len() as f64
            }
        })
        .collect();
    BlockedFraction {
        per_layer,
        total: if n_total == 0 {
            0.0
        } else {
            blocked_total as f64 / n_total as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::TaskImportance;
    use proptest::prelude::*;
    use std::vec;
    use std::vec::Vec;

    fn state(per_layer: Vec<Vec<f64>>) -> ImportanceState {
        ImportanceState::from_parts(per_layer, 1).unwrap()
    }

    fn grads(vals: &[f64]) -> GradientSet {
        GradientSet::new(vec![LayerParams::new(vals.len() - 1, 1, vals[..vals.len() - 1].to_vec(), vec![vals[vals.len() - 1]]).unwrap()])
    }

    #[test]
    fn soft_mask_examples() {
        let g = grads(&[2.0, -3.0, 4.0]);
        let zero = state(vec![vec![0.0; 3]]);
        assert_eq!(soft_mask_extractor(&g, &zero).unwrap(), g);
        let half = state(vec![vec![0.5, 0.0, 1.0 - 1e-12]]);
        let m = soft_mask_extractor(&g, &half).unwrap();
        let flat = m.layers()[0].to_flat();
        assert_eq!(flat[0], 1.0);
        assert_eq!(flat[1], -3.0);
        assert!(flat[2].abs() < 1e-11);
        assert!(soft_mask_extractor(&g, &state(vec![vec![0.0; 2]])).is_err());
    }

    #[test]
    fn head_mask_examples() {
        let h = LayerParams::new(1, 1, vec![4.0], vec![-8.0]).unwrap();
        assert_eq!(soft_mask_head(&h, 0.0).unwrap(), h);
        let m = soft_mask_head(&h, 0.25).unwrap();
        assert_eq!(m.to_flat(), vec![3.0, -6.0]);
        assert!(soft_mask_head(&h, 1.0).is_err());
        assert!(soft_mask_head(&h, -0.1).is_err());
    }

    #[test]
    fn harden_examples() {
        let s = state(vec![vec![0.1, 0.7]]);
        assert_eq!(harden(&s, 0.6).unwrap().per_layer(), &[vec![false, true]]);
        assert!(harden(&s, 0.999_999).unwrap().per_layer()[0].iter().all(|b| !b));
        assert!(harden(&s, 0.0).is_err());
        assert!(harden(&s, 1.0).is_err());
    }

    #[test]
    fn hard_equals_soft_at_endpoints() {
        let s = state(vec![vec![0.0, 1.0, 1.0, 0.0]]);
        let g = grads(&[1.5, -2.0, 0.25, 3.0]);
        let hard = harden(&s, 0.5).unwrap().apply(&g).unwrap();
        let soft = soft_mask_extractor(&g, &s).unwrap();
        assert_eq!(hard, soft);
    }

    #[test]
    fn blocked_fraction_examples() {
        let z = ImportanceState::zeros_with_sizes(&[3, 2]);
        let b = blocked_fraction(&z, BLOCKED_EPS);
        assert_eq!(b.total, 0.0);
        assert_eq!(b.per_layer, vec![0.0, 0.0]);

        let s = state(vec![vec![0.2, 0.5, 1.0 - 1e-8]]);
        assert!((blocked_fraction(&s, 1e-6).total - 1.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn soft_mask_is_contractive(
            pairs in prop::collection::vec((-5f64..5.0, 0f64..1.0), 2..40)
        ) {
            let (g, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let gs = grads(&g);
            let m = soft_mask_extractor(&gs, &state(vec![y.clone()])).unwrap();
            for ((a, b), &gamma) in gs.layers()[0].iter().zip(m.layers()[0].iter()).zip(&y) {
                prop_assert!(b.abs() <= a.abs());
                prop_assert!(a * b >= 0.0);
                if gamma == 0.0 {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn total_is_weighted_mean_of_layers(
            a in prop::collection::vec(0f64..1.0, 1..20),
            b in prop::collection::vec(0f64..1.0, 1..20),
            eps in 1e-3f64..0.5,
        ) {
            let s = state(vec![a.clone(), b.clone()]);
            let f = blocked_fraction(&s, eps);
            let weighted = (f.per_layer[0] * a.len() as f64 + f.per_layer[1] * b.len() as f64)
                / (a.len() + b.len()) as f64;
            prop_assert!((f.total - weighted).abs() < 1e-12);
            let recount = a.iter().chain(&b).filter(|&&g| g >= 1.0 - eps).count() as f64
                / (a.len() + b.len()) as f64;
            prop_assert!((f.total - recount).abs() < 1e-12);
        }

        #[test]
        fn lower_threshold_blocks_superset(y in prop::collection::vec(0f64..1.0, 1..50), lo in 0.01f64..0.98) {
            let hi = (lo + 0.01).min(0.99);
            let s = state(vec![y]);
            let a = harden(&s, lo).unwrap();
            let b = harden(&s, hi).unwrap();
            for (x, z) in a.per_layer()[0].iter().zip(&b.per_layer()[0]) {
                prop_assert!(*x || !*z);
            }
        }

        #[test]
        fn blocked_monotone_under_accumulation(
            t1 in prop::collection::vec(0.9f64..1.0, 10),
            t2 in prop::collection::vec(0.9f64..1.0, 10),
        ) {
            let mut s = ImportanceState::zeros_with_sizes(&[10]);
            s.accumulate(&TaskImportance::single(vec![t1])).unwrap();
            let f1 = blocked_fraction(&s, 0.05).total;
            s.accumulate(&TaskImportance::single(vec![t2])).unwrap();
            prop_assert!(blocked_fraction(&s, 0.05).total >= f1);
        }
    }
}
