//! One memory layer's building blocks: bilinear interactions against the
//! prototypes, attention over the memory, summaries and prototype updates.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Pre-GRU interaction features `[2K, n]` for one channel:
/// column `j` is `tanh([h_jᵀ G u^a : h_jᵀ D u^p])`.
pub fn interact(g: &mut Graph, memory: NodeId, g_tensor: NodeId, d_tensor: NodeId, u_a: NodeId, u_p: NodeId) -> Result<NodeId> {
    let with_aspect = g.bilinear(memory, g_tensor, u_a)?;
    let with_opinion = g.bilinear(memory, d_tensor, u_p)?;
    let both = g.concat(&[with_aspect, with_opinion])?;
    Ok(g.tanh(both))
}

/// Scores `e[j] = ⟨v, r[:, j]⟩` and weights `α = softmax(e)`.
pub fn attend(g: &mut Graph, features: NodeId, v: NodeId) -> Result<(NodeId, NodeId)> {
    let ft = g.transpose(features)?;
    let e = g.matmul(ft, v)?;
    let alpha = g.softmax(e)?;
    Ok((e, alpha))
}

/// `o = Σ_j α[j] h_j`.
pub fn summarize(g: &mut Graph, memory: NodeId, alpha: NodeId) -> Result<NodeId> {
    let (m, a) = (g.value(memory).shape(), g.value(alpha).shape());
    if m.len() != 2 || a != [m[1]] {
        return Err(Error::shape("summarize", m, a));
    }
    g.matmul(memory, alpha)
}

/// `u_{t+1} = tanh(Q u_t) + õ_t`.
pub fn update_prototype(g: &mut Graph, q: NodeId, u: NodeId, summary: NodeId) -> Result<NodeId> {
    let qu = g.matmul(q, u)?;
    let t = g.tanh(qu);
    g.add(t, summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_tensors_give_zero_features() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::uniform(&[3, 4], 1.0, &mut rng(0)));
        let t = g.constant(Tensor::zeros(&[2, 3, 3]));
        let u = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let r = interact(&mut g, h, t, t, u, u).unwrap();
        assert_eq!(g.value(r), &Tensor::zeros(&[4, 4]));
    }

    #[test]
    fn identity_slices_and_unit_vectors() {
        let mut g = Graph::new();
        let e1 = Tensor::vector(vec![1.0, 0.0]);
        let h = g.constant(Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        let t = g.constant(Tensor::eye(2).reshape(&[1, 2, 2]).unwrap());
        let u = g.constant(e1);
        let r = interact(&mut g, h, t, t, u, u).unwrap();
        for &v in g.value(r).data() {
            assert!((v - 0.761_594_155_955_764_9).abs() < 1e-15);
        }
    }

    #[test]
    fn interaction_matches_loop_oracle() {
        let mut r = rng(1);
        let (d, k, n) = (3, 2, 4);
        let h = Tensor::uniform(&[d, n], 1.0, &mut r);
        let gt = Tensor::uniform(&[k, d, d], 1.0, &mut r);
        let dt = Tensor::uniform(&[k, d, d], 1.0, &mut r);
        let ua = Tensor::uniform(&[d], 1.0, &mut r);
        let up = Tensor::uniform(&[d], 1.0, &mut r);
        let mut g = Graph::new();
        let ids = [&h, &gt, &dt, &ua, &up].map(|t| g.constant(t.clone()));
        let out = interact(&mut g, ids[0], ids[1], ids[2], ids[3], ids[4]).unwrap();
        let out = g.value(out);
        let form = |t: &Tensor, kk: usize, j: usize, u: &Tensor| -> f64 {
            let mut s = 0.0;
            for a in 0..d {
                for b in 0..d {
                    s += h.at(a, j) * t.data()[(kk * d + a) * d + b] * u.data()[b];
                }
            }
            s
        };
        for j in 0..n {
            for kk in 0..k {
                assert!((out.at(kk, j) - form(&gt, kk, j, &ua).tanh()).abs() < 1e-12);
                assert!((out.at(k + kk, j) - form(&dt, kk, j, &up).tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_cases() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::uniform(&[4, 3], 1.0, &mut rng(2)));
        let zero = g.constant(Tensor::zeros(&[4]));
        let (_, a) = attend(&mut g, f, zero).unwrap();
        assert!(g.value(a).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let spike = g.constant(Tensor::from_rows(&[&[0.0, 1000.0, 0.0]]).unwrap());
        let one = g.constant(Tensor::vector(vec![1.0]));
        let (_, a) = attend(&mut g, spike, one).unwrap();
        assert!((g.value(a).data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_matches_oracle() {
        let mut r = rng(3);
        let feats = Tensor::uniform(&[4, 5], 1.0, &mut r);
        let v = Tensor::uniform(&[4], 1.0, &mut r);
        let mut g = Graph::new();
        let (fi, vi) = (g.constant(feats.clone()), g.constant(v.clone()));
        let (e, a) = attend(&mut g, fi, vi).unwrap();
        let scores: Vec<f64> = (0..5).map(|j| (0..4).map(|i| feats.at(i, j) * v.data()[i]).sum()).collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for j in 0..5 {
            assert!((g.value(e).data()[j] - scores[j]).abs() < 1e-12);
            assert!((g.value(a).data()[j] - scores[j].exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_cases() {
        let mut r = rng(4);
        let h = Tensor::uniform(&[3, 4], 1.0, &mut r);
        let mut g = Graph::new();
        let hi = g.constant(h.clone());
        let onehot = g.constant(Tensor::vector(vec![0.0, 0.0, 1.0, 0.0]));
        let o = summarize(&mut g, hi, onehot).unwrap();
        assert_eq!(g.value(o), &h.column(2));

        let alpha = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]);
        let ai = g.constant(alpha.clone());
        let o = summarize(&mut g, hi, ai).unwrap();
        for i in 0..3 {
            let expected: f64 = (0..4).map(|j| alpha.data()[j] * h.at(i, j)).sum();
            assert!((g.value(o).data()[i] - expected).abs() < 1e-12);
        }

        let same = g.constant(Tensor::from_rows(&[&[0.5, 0.5, 0.5, 0.5], &[-2.0, -2.0, -2.0, -2.0]]).unwrap());
        let o = summarize(&mut g, same, ai).unwrap();
        assert!(g.value(o).max_abs_diff(&Tensor::vector(vec![0.5, -2.0])) < 1e-12);

        let short = g.constant(Tensor::vector(vec![1.0]));
        assert!(summarize(&mut g, hi, short).is_err());
    }

    #[test]
    fn prototype_update_cases() {
        let mut g = Graph::new();
        let q0 = g.constant(Tensor::zeros(&[2, 2]));
        let u = g.constant(Tensor::vector(vec![0.3, 0.4]));
        let o = g.constant(Tensor::vector(vec![-1.0, 2.0]));
        let next = update_prototype(&mut g, q0, u, o).unwrap();
        assert_eq!(g.value(next).data(), &[-1.0, 2.0]);

        let zero = g.constant(Tensor::zeros(&[2]));
        let q = g.constant(Tensor::eye(2));
        let next = update_prototype(&mut g, q, zero, zero).unwrap();
        assert_eq!(g.value(next).data(), &[0.0, 0.0]);

        let q = g.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let u = g.constant(Tensor::vector(vec![1.0]));
        let o = g.constant(Tensor::vector(vec![0.5]));
        let next = update_prototype(&mut g, q, u, o).unwrap();
        assert!((g.value(next).item() - 1.261_594_155_955_764_9).abs() < 1e-15);
    }
}
