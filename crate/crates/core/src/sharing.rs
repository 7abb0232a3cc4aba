//! Cross-category sharing: interaction-tensor parameterizations and
//! prototype-driven task mixing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Axis;

/// How the per-category interaction tensors are parameterized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorSharing {
    /// Combinations of `m` shared basis matrices per interaction slice.
    Factored,
    /// Four free `[K, d, d]` tensors per category.
    Independent,
    /// One set of four tensors used by every category.
    SingleShared,
}

impl TensorSharing {
    pub fn as_str(self) -> &'static str {
        match self {
            TensorSharing::Factored => "factored",
            TensorSharing::Independent => "independent",
            TensorSharing::SingleShared => "single-shared",
        }
    }
}

impl fmt::Display for TensorSharing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TensorSharing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factored" => Ok(TensorSharing::Factored),
            "independent" => Ok(TensorSharing::Independent),
            "single-shared" => Ok(TensorSharing::SingleShared),
            _ => Err(Error::Config(format!(
                "unknown tensor sharing {s:?} (expected factored, independent or single-shared)"
            ))),
        }
    }
}

/// Which of the three multi-task components are active.
///
/// C1 is factored tensors, C2 is feature sharing through the similarity
/// matrices, C3 is the auxiliary sentence-level task. The token loss is
/// always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SharingConfig {
    pub tensor_sharing: TensorSharing,
    pub feature_sharing: bool,
    pub auxiliary_task: bool,
}

impl Default for SharingConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl SharingConfig {
    /// C1+C2+C3.
    pub fn full() -> Self {
        SharingConfig {
            tensor_sharing: TensorSharing::Factored,
            feature_sharing: true,
            auxiliary_task: true,
        }
    }

    /// Builds a configuration from command-line style ablation switches.
    pub fn from_flags(no_tensor_sharing: bool, single_shared: bool, no_feature_sharing: bool, no_auxiliary: bool) -> Result<Self> {
        let tensor_sharing = match (no_tensor_sharing, single_shared) {
            (true, true) => {
                return Err(Error::Config(
                    "--no-tensor-sharing and --single-shared-tensor are mutually exclusive".into(),
                ))
            }
            (true, false) => TensorSharing::Independent,
            (false, true) => TensorSharing::SingleShared,
            (false, false) => TensorSharing::Factored,
        };
        Ok(SharingConfig {
            tensor_sharing,
            feature_sharing: !no_feature_sharing,
            auxiliary_task: !no_auxiliary,
        })
    }

    /// The ablation rows by label: `C1+C2+C3`, `C1+C3`, `C2+C3`, `C2+C3*`,
    /// `C1+C2`, `C3`.
    pub fn preset(label: &str) -> Option<Self> {
        let (tensor_sharing, feature_sharing, auxiliary_task) = match label {
            "C1+C2+C3" => (TensorSharing::Factored, true, true),
            "C1+C3" => (TensorSharing::Factored, false, true),
            "C2+C3" => (TensorSharing::Independent, true, true),
            "C2+C3*" => (TensorSharing::SingleShared, true, true),
            "C1+C2" => (TensorSharing::Factored, true, false),
            "C3" => (TensorSharing::Independent, false, true),
            _ => return None,
        };
        Some(SharingConfig {
            tensor_sharing,
            feature_sharing,
            auxiliary_task,
        })
    }

    pub const PRESETS: [&'static str; 6] = ["C1+C2+C3", "C1+C3", "C2+C3", "C2+C3*", "C1+C2", "C3"];

    /// Short label in the same notation as [`Self::preset`].
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.tensor_sharing == TensorSharing::Factored {
            parts.push("C1");
        }
        if self.feature_sharing {
            parts.push("C2");
        }
        if self.auxiliary_task {
            parts.push(if self.tensor_sharing == TensorSharing::SingleShared {
                "C3*"
            } else {
                "C3"
            });
        }
        if parts.is_empty() {
            return "none".into();
        }
        parts.join("+")
    }
}

/// The four interaction tensor families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// Aspect channel, aspect prototype.
    GA,
    /// Opinion channel, aspect prototype.
    GP,
    /// Aspect channel, opinion prototype.
    DA,
    /// Opinion channel, opinion prototype.
    DP,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::GA, Family::GP, Family::DA, Family::DP];

    pub fn name(self) -> &'static str {
        match self {
            Family::GA => "g_a",
            Family::GP => "g_p",
            Family::DA => "d_a",
            Family::DP => "d_p",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// `S = softmax(UᵀU)` normalized so that each row `S[c, :]` is a distribution,
/// where `U` has the prototypes as columns.
pub fn task_similarity(g: &mut Graph, prototypes: &[NodeId]) -> Result<NodeId> {
    let u = g.stack_cols(prototypes)?;
    let ut = g.transpose(u)?;
    let m = g.matmul(ut, u)?;
    g.softmax_axis(m, Axis::Rows)
}

/// `out[c] = Σ_{c'} S[c, c'] · items[c']` for equally shaped items.
pub fn mix(g: &mut Graph, s: NodeId, items: &[NodeId]) -> Result<Vec<NodeId>> {
    let shape = g.value(items[0]).shape().to_vec();
    let ss = g.value(s).shape();
    if ss != [items.len(), items.len()] {
        return Err(Error::shape("mix", ss, &[items.len()]));
    }
    let stacked = g.stack_rows(items)?;
    let mixed = g.matmul(s, stacked)?;
    (0..items.len())
        .map(|c| {
            let row = g.row(mixed, c)?;
            if shape.len() == 1 {
                Ok(row)
            } else {
                g.reshape(row, &shape)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn similarity(cols: &[Vec<f64>]) -> Tensor {
        let mut g = Graph::new();
        let us: Vec<NodeId> = cols.iter().map(|c| g.constant(Tensor::vector(c.clone()))).collect();
        let s = task_similarity(&mut g, &us).unwrap();
        g.value(s).clone()
    }

    #[test]
    fn identical_prototypes_give_uniform_weights() {
        let s = similarity(&[vec![0.3, -1.0], vec![0.3, -1.0], vec![0.3, -1.0]]);
        assert!(s.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn single_task_is_identity() {
        assert_eq!(similarity(&[vec![5.0, 2.0]]).data(), &[1.0]);
    }

    #[test]
    fn large_orthogonal_prototype_concentrates_on_its_diagonal() {
        let s = similarity(&[vec![10.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        // Row 0: softmax([100, 0, 0]).
        let e = (-100.0f64).exp();
        assert!((s.at(0, 0) - 1.0 / (1.0 + 2.0 * e)).abs() < 1e-15);
        // Rows 1 and 2: softmax of [0, 1, 0] and [0, 0, 1].
        let z = 2.0 + 1f64.exp();
        assert!((s.at(1, 1) - 1f64.exp() / z).abs() < 1e-15);
        assert!((s.at(1, 0) - 1.0 / z).abs() < 1e-15);
    }

    fn mix_values(s: Tensor, items: &[Tensor]) -> Vec<Tensor> {
        let mut g = Graph::new();
        let s = g.constant(s);
        let ids: Vec<NodeId> = items.iter().map(|t| g.constant(t.clone())).collect();
        let out = mix(&mut g, s, &ids).unwrap();
        out.into_iter().map(|id| g.value(id).clone()).collect()
    }

    #[test]
    fn identity_mixing_returns_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[4, 5], 1.0, &mut rng)).collect();
        assert_eq!(mix_values(Tensor::eye(3), &items), items);
    }

    #[test]
    fn uniform_mixing_averages() {
        let items = vec![
            Tensor::vector(vec![1.0, 2.0]),
            Tensor::vector(vec![3.0, 4.0]),
            Tensor::vector(vec![5.0, 0.0]),
        ];
        for out in mix_values(Tensor::filled(&[3, 3], 1.0 / 3.0), &items) {
            assert!(out.max_abs_diff(&Tensor::vector(vec![3.0, 2.0])) < 1e-12);
        }
        let same = vec![Tensor::vector(vec![0.7, -0.1]); 3];
        let s = similarity(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![0.5, 0.5]]);
        for out in mix_values(s, &same) {
            assert!(out.max_abs_diff(&same[0]) < 1e-12);
        }
    }

    #[test]
    fn mixing_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = similarity(&[vec![0.2, 0.9], vec![-0.4, 0.3], vec![1.1, -0.7]]);
        let items: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[2, 3], 1.0, &mut rng)).collect();
        let out = mix_values(s.clone(), &items);
        for c in 0..3 {
            for i in 0..2 {
                for j in 0..3 {
                    let expected: f64 = (0..3).map(|cp| s.at(c, cp) * items[cp].at(i, j)).sum();
                    assert!((out[c].at(i, j) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn presets_and_flags_agree() {
        assert_eq!(SharingConfig::preset("C1+C2+C3"), Some(SharingConfig::from_flags(false, false, false, false).unwrap()));
        assert_eq!(SharingConfig::preset("C1+C3"), Some(SharingConfig::from_flags(false, false, true, false).unwrap()));
        assert_eq!(SharingConfig::preset("C2+C3"), Some(SharingConfig::from_flags(true, false, false, false).unwrap()));
        assert_eq!(SharingConfig::preset("C2+C3*"), Some(SharingConfig::from_flags(false, true, false, false).unwrap()));
        assert_eq!(SharingConfig::preset("C3"), Some(SharingConfig::from_flags(true, false, true, false).unwrap()));
        assert!(SharingConfig::from_flags(true, true, false, false).is_err());
        for label in SharingConfig::PRESETS {
            assert_eq!(SharingConfig::preset(label).unwrap().label(), label);
        }
    }

    proptest! {
        #[test]
        fn similarity_rows_are_distributions(vals in proptest::collection::vec(-3.0f64..3.0, 12)) {
            let cols: Vec<Vec<f64>> = vals.chunks(3).map(|c| c.to_vec()).collect();
            let s = similarity(&cols);
            for c in 0..4 {
                let sum: f64 = s.row(c).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(s.row(c).iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }
}
