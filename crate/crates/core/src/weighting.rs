//! Per-view weights: initialization, block scaling of the fused representation,
//! and the consistency/complementarity update.
//!
//! The update for view `v` is
//!
//! ```text
//! w_v = (exp(NMI(SL^v, SL)) - 1) / Norm(CE_v) + ε_w
//! ```
//!
//! where `CE_v` is the view's total conditional entropy and `Norm` rescales the
//! `V` entropies min-max into `[0.1, 1]`.

use serde::{Deserialize, Serialize};

use crate::clustering::SoftLabels;
use crate::error::{Error, Result};
use crate::infometrics::{self, ConditionalEntropyVector};
use crate::numcore::Matrix;

/// Lower end of the normalized conditional-entropy range.
pub const NORM_FLOOR: f64 = 0.1;
/// Added to every updated weight to keep it strictly positive.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Which quantities drive the weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// `w = NMI`
    Nmi,
    /// `w = exp(NMI) - 1`
    Enmi,
    /// `w = (exp(NMI) - 1) / Norm(CE)`
    EnmiCe,
}

impl WeightingMode {
    pub const ALL: [WeightingMode; 3] = [WeightingMode::Nmi, WeightingMode::Enmi, WeightingMode::EnmiCe];

    pub fn name(self) -> &'static str {
        match self {
            WeightingMode::Nmi => "nmi",
            WeightingMode::Enmi => "enmi",
            WeightingMode::EnmiCe => "enmi_ce",
        }
    }
}

impl std::str::FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightingMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown weighting mode {s:?} (expected nmi, enmi or enmi_ce)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewWeights {
    weights: Vec<f64>,
    iteration: usize,
}

impl ViewWeights {
    pub fn new(weights: Vec<f64>, iteration: usize) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("view weights need at least one view".into()));
        }
        if let Some((v, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidInput(format!("weight of view {v} must be positive and finite, got {w}")));
        }
        Ok(Self { weights, iteration })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }
}

/// Unit weight for every view.
pub fn init_weights(view_dims: &[usize]) -> Result<ViewWeights> {
    if view_dims.is_empty() {
        return Err(Error::InvalidInput("no views to weight".into()));
    }
    if let Some(v) = view_dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidInput(format!("view {v} has zero latent dimensions")));
    }
    ViewWeights::new(vec![1.0; view_dims.len()], 0)
}

/// Column-concatenated, per-view-scaled representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRepresentation {
    matrix: Matrix,
    /// `V + 1` column boundaries; view `v` occupies `offsets[v]..offsets[v + 1]`.
    offsets: Vec<usize>,
}

impl FusedRepresentation {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn view_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn view_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn block(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }
}

pub fn scale_representations(w: &ViewWeights, reps: &[Matrix]) -> Result<FusedRepresentation> {
    if reps.len() != w.len() {
        return Err(Error::shape("scale_representations views", w.len(), reps.len()));
    }
    let blocks: Vec<Matrix> = reps
        .iter()
        .zip(w.weights())
        .map(|(r, &wv)| r.scale(wv))
        .collect();
    let refs: Vec<&Matrix> = blocks.iter().collect();
    let matrix = Matrix::hcat(&refs)?;
    let mut offsets = Vec::with_capacity(reps.len() + 1);
    offsets.push(0);
    for r in reps {
        offsets.push(offsets.last().unwrap() + r.cols());
    }
    Ok(FusedRepresentation { matrix, offsets })
}

/// Min-max rescaling into `[NORM_FLOOR, 1]`; all-equal input maps to all ones.
pub fn normalize_entropies(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range.is_nan() || range <= 0.0 {
        return vec![1.0; values.len()];
    }
    values
        .iter()
        .map(|v| NORM_FLOOR + (1.0 - NORM_FLOOR) * (v - min) / range)
        .collect()
}

/// Per-view NMI between the view's hard labels and the unified hard labels.
pub fn view_consistency(view_soft_labels: &[SoftLabels], unified: &SoftLabels) -> Result<Vec<f64>> {
    let k = unified.k();
    if let Some((v, sl)) = view_soft_labels.iter().enumerate().find(|(_, s)| s.k() != k) {
        return Err(Error::shape("soft label clusters", k, format!("{} (view {v})", sl.k())));
    }
    if let Some((v, sl)) = view_soft_labels.iter().enumerate().find(|(_, s)| s.len() != unified.len()) {
        return Err(Error::shape("soft label rows", unified.len(), format!("{} (view {v})", sl.len())));
    }
    let unified_labels = unified.hard_labels();
    view_soft_labels
        .iter()
        .map(|sl| infometrics::nmi(&sl.hard_labels(), &unified_labels))
        .collect()
}

/// New weights from the current per-view/unified soft labels and conditional entropies.
pub fn update_weights(
    previous: &ViewWeights,
    view_soft_labels: &[SoftLabels],
    unified: &SoftLabels,
    cond_entropy: &ConditionalEntropyVector,
    mode: WeightingMode,
) -> Result<ViewWeights> {
    let v = previous.len();
    if view_soft_labels.len() != v {
        return Err(Error::shape("update_weights views", v, view_soft_labels.len()));
    }
    if cond_entropy.len() != v {
        return Err(Error::shape("update_weights entropies", v, cond_entropy.len()));
    }
    let consistency = view_consistency(view_soft_labels, unified)?;
    ViewWeights::new(weights_from(&consistency, cond_entropy.values(), mode), previous.iteration + 1)
}

/// The weight formula on already-computed per-view NMI and conditional entropies.
pub fn weights_from(nmi: &[f64], cond_entropy: &[f64], mode: WeightingMode) -> Vec<f64> {
    let denominators = match mode {
        WeightingMode::EnmiCe => normalize_entropies(cond_entropy),
        _ => vec![1.0; nmi.len()],
    };
    nmi.iter()
        .zip(denominators)
        .map(|(&m, den)| {
            let numerator = match mode {
                WeightingMode::Nmi => m,
                WeightingMode::Enmi | WeightingMode::EnmiCe => m.exp() - 1.0,
            };
            numerator / den + WEIGHT_FLOOR
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn onehot(labels: &[usize], k: usize) -> SoftLabels {
        SoftLabels::new(Matrix::from_fn(labels.len(), k, |r, c| if labels[r] == c { 1.0 } else { 0.0 })).unwrap()
    }

    #[test]
    fn init_is_all_ones() {
        assert_eq!(init_weights(&[4, 4]).unwrap().weights(), &[1.0, 1.0]);
        let w = init_weights(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(w.weights(), &[1.0; 5]);
        assert_eq!(w.iteration(), 0);
        assert!(init_weights(&[]).is_err());
        assert!(init_weights(&[3, 0]).is_err());
    }

    #[test]
    fn unit_weights_concatenate() {
        let a = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        let b = Matrix::from_fn(3, 1, |r, _| -(r as f64));
        let fused = scale_representations(&init_weights(&[2, 1]).unwrap(), &[a.clone(), b.clone()]).unwrap();
        assert_eq!(fused.matrix(), &Matrix::hcat(&[&a, &b]).unwrap());
        assert_eq!(fused.view_offsets(), &[0, 2, 3]);
    }

    #[test]
    fn scaling_touches_only_its_block() {
        let a = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 + 1.0);
        let b = Matrix::from_fn(3, 2, |r, c| (r + c) as f64 - 1.5);
        let base = scale_representations(&ViewWeights::new(vec![1.0, 0.5], 0).unwrap(), &[a.clone(), b.clone()]).unwrap();
        let doubled = scale_representations(&ViewWeights::new(vec![2.0, 0.5], 0).unwrap(), &[a, b]).unwrap();
        for r in 0..3 {
            for c in base.block(0) {
                assert_eq!(doubled.matrix()[(r, c)], 2.0 * base.matrix()[(r, c)]);
            }
            for c in base.block(1) {
                assert_eq!(doubled.matrix()[(r, c)], base.matrix()[(r, c)]);
            }
        }
        assert!(ViewWeights::new(vec![1.0, 0.0], 0).is_err());
        assert!(scale_representations(&init_weights(&[2]).unwrap(), &[Matrix::zeros(1, 2), Matrix::zeros(1, 2)]).is_err());
    }

    #[test]
    fn identical_labels_give_e_minus_one() {
        let sl = onehot(&[0, 1, 2, 0, 1, 2], 3);
        let prev = init_weights(&[2, 2]).unwrap();
        let ce = ConditionalEntropyVector(vec![1.0, 1.0]);
        let w = update_weights(&prev, &[sl.clone(), sl.clone()], &sl, &ce, WeightingMode::EnmiCe).unwrap();
        let expected = std::f64::consts::E - 1.0 + WEIGHT_FLOOR;
        assert!((w.weights()[0] - expected).abs() < 1e-12);
        assert_eq!(w.iteration(), 1);
    }

    #[test]
    fn independent_labels_give_floor() {
        let unified = onehot(&[0, 0, 1, 1], 2);
        let view = onehot(&[0, 1, 0, 1], 2);
        let prev = init_weights(&[1]).unwrap();
        let w = update_weights(&prev, &[view], &unified, &ConditionalEntropyVector(vec![0.0]), WeightingMode::EnmiCe).unwrap();
        assert!((w.weights()[0] - WEIGHT_FLOOR).abs() < 1e-15);
    }

    #[test]
    fn lower_entropy_wins_at_equal_consistency() {
        let w = weights_from(&[0.6, 0.6], &[0.5, 2.0], WeightingMode::EnmiCe);
        assert!(w[0] > w[1]);
        let enmi = weights_from(&[0.6, 0.6], &[0.5, 2.0], WeightingMode::Enmi);
        assert_eq!(enmi[0], enmi[1]);
    }

    #[test]
    fn equal_entropies_reduce_to_enmi() {
        let nmi = [0.2, 0.7, 0.9];
        assert_eq!(
            weights_from(&nmi, &[3.0; 3], WeightingMode::EnmiCe),
            weights_from(&nmi, &[3.0; 3], WeightingMode::Enmi)
        );
    }

    #[test]
    fn normalization_range() {
        assert_eq!(normalize_entropies(&[1.0, 3.0, 2.0]), vec![0.1, 1.0, 0.55]);
        assert_eq!(normalize_entropies(&[4.0, 4.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn cluster_count_mismatch() {
        let prev = init_weights(&[1, 1]).unwrap();
        let err = update_weights(
            &prev,
            &[onehot(&[0, 1], 2), onehot(&[0, 1], 3)],
            &onehot(&[0, 1], 2),
            &ConditionalEntropyVector(vec![0.0, 0.0]),
            WeightingMode::EnmiCe,
        );
        assert!(err.is_err());
    }

    #[test]
    fn relabeling_invariance() {
        let unified = onehot(&[0, 0, 1, 1, 2, 2, 0], 3);
        let view = onehot(&[1, 1, 0, 2, 2, 2, 1], 3);
        let permuted = onehot(&[2, 2, 1, 0, 0, 0, 2], 3);
        let prev = init_weights(&[1]).unwrap();
        let ce = ConditionalEntropyVector(vec![0.3]);
        let a = update_weights(&prev, &[view], &unified, &ce, WeightingMode::EnmiCe).unwrap();
        let b = update_weights(&prev, &[permuted], &unified, &ce, WeightingMode::EnmiCe).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in WeightingMode::ALL {
            assert_eq!(m.name().parse::<WeightingMode>().unwrap(), m);
        }
        assert!("ce".parse::<WeightingMode>().is_err());
    }

    proptest! {
        #[test]
        fn weights_positive_and_monotone(
            nmi in prop::collection::vec(0.0f64..=1.0, 2..6),
            ce in prop::collection::vec(-20.0f64..20.0, 6),
            bump in 0.0f64..0.5,
        ) {
            let ce = &ce[..nmi.len()];
            for mode in WeightingMode::ALL {
                let w = weights_from(&nmi, ce, mode);
                prop_assert!(w.iter().all(|&x| x > 0.0 && x.is_finite()));

                // more consistency never lowers a weight
                let mut higher = nmi.clone();
                higher[0] = (higher[0] + bump).min(1.0);
                prop_assert!(weights_from(&higher, ce, mode)[0] >= w[0]);
            }
            // more conditional entropy never raises a weight
            let w = weights_from(&nmi, ce, WeightingMode::EnmiCe);
            let mut worse = ce.to_vec();
            worse[0] += bump;
            prop_assert!(weights_from(&nmi, &worse, WeightingMode::EnmiCe)[0] <= w[0] + 1e-12);
        }
    }
}
