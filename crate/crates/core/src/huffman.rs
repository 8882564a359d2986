//! Huffman tree over vocabulary frequencies, used by the hierarchical
//! softmax output layer.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Per-leaf root-to-leaf paths through the inner nodes of a Huffman tree.
///
/// `signs[t][i]` is -1.0 when leaf `t` is reached through the left branch of
/// inner node `paths[t][i]`, +1.0 for the right branch. Inner nodes are
/// numbered in creation (merge) order, so there are exactly `len - 1` of
/// them for `len` leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanTree {
    pub paths: Vec<Vec<u32>>,
    pub signs: Vec<Vec<f64>>,
    pub inner_count: usize,
}

impl HuffmanTree {
    pub fn leaf_count(&self) -> usize {
        self.paths.len()
    }

    pub fn depth(&self, t: u32) -> usize {
        self.paths[t as usize].len()
    }

    /// Total weighted path length for the given leaf weights.
    pub fn weighted_path_length(&self, freqs: &[u64]) -> u64 {
        freqs
            .iter()
            .enumerate()
            .map(|(t, f)| f * self.paths[t].len() as u64)
            .sum()
    }
}

enum Node {
    Leaf(u32),
    Inner { id: u32, left: usize, right: usize },
}

/// Classic Huffman construction.
///
/// Tie-breaking is deterministic: among equal weights, the tree created
/// earliest is merged first (leaves count as created in id order, before any
/// inner node).
pub fn build_huffman(freqs: &[u64]) -> Result<HuffmanTree> {
    if freqs.len() < 2 {
        return Err(Error::Data(format!(
            "huffman tree needs at least 2 terms, got {}",
            freqs.len()
        )));
    }
    if let Some(t) = freqs.iter().position(|f| *f == 0) {
        return Err(Error::Data(format!("term {t} has zero frequency")));
    }

    let mut nodes: Vec<Node> = (0..freqs.len() as u32).map(Node::Leaf).collect();
    // (weight, creation sequence, node index); min-heap via Reverse
    let mut heap: BinaryHeap<Reverse<(u64, u64, usize)>> = freqs
        .iter()
        .enumerate()
        .map(|(i, f)| Reverse((*f, i as u64, i)))
        .collect();
    let mut seq = freqs.len() as u64;
    let mut next_inner = 0u32;
    while heap.len() > 1 {
        let Reverse((w_left, _, left)) = heap.pop().unwrap();
        let Reverse((w_right, _, right)) = heap.pop().unwrap();
        let idx = nodes.len();
        nodes.push(Node::Inner {
            id: next_inner,
            left,
            right,
        });
        next_inner += 1;
        heap.push(Reverse((w_left + w_right, seq, idx)));
        seq += 1;
    }
    let Reverse((_, _, root)) = heap.pop().unwrap();

    let mut paths = vec![Vec::new(); freqs.len()];
    let mut signs = vec![Vec::new(); freqs.len()];
    // iterative DFS carrying the root-to-node prefix
    let mut stack: Vec<(usize, Vec<u32>, Vec<f64>)> = vec![(root, Vec::new(), Vec::new())];
    while let Some((idx, path, sign)) = stack.pop() {
        match &nodes[idx] {
            Node::Leaf(t) => {
                paths[*t as usize] = path;
                signs[*t as usize] = sign;
            }
            Node::Inner { id, left, right } => {
                let mut lp = path.clone();
                lp.push(*id);
                let mut ls = sign.clone();
                ls.push(-1.0);
                stack.push((*left, lp, ls));
                let mut rp = path;
                rp.push(*id);
                let mut rs = sign;
                rs.push(1.0);
                stack.push((*right, rp, rs));
            }
        }
    }
    Ok(HuffmanTree {
        paths,
        signs,
        inner_count: freqs.len() - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimum weighted path length over every binary merge order, i.e. over
    /// all full binary prefix codes. Exponential; test-only oracle.
    pub fn optimal_weighted_path_length(freqs: &[u64]) -> u64 {
        fn go(weights: &[u64], acc: u64, best: &mut u64) {
            if weights.len() == 1 {
                *best = (*best).min(acc);
                return;
            }
            for i in 0..weights.len() {
                for j in (i + 1)..weights.len() {
                    let merged = weights[i] + weights[j];
                    let mut next = Vec::with_capacity(weights.len() - 1);
                    for (k, &w) in weights.iter().enumerate() {
                        if k != i && k != j {
                            next.push(w);
                        }
                    }
                    next.push(merged);
                    go(&next, acc + merged, best);
                }
            }
        }
        let mut best = u64::MAX;
        go(freqs, 0, &mut best);
        best
    }

    #[test]
    fn two_leaves_at_depth_one() {
        let t = build_huffman(&[1, 1]).unwrap();
        assert_eq!(t.depth(0), 1);
        assert_eq!(t.depth(1), 1);
        assert_eq!(t.inner_count, 1);
        assert_ne!(t.signs[0][0], t.signs[1][0]);
    }

    #[test]
    fn three_leaves_skewed() {
        // brute-force over all prefix codes confirms depth(c)=1, depth(a)=depth(b)=2
        let freqs = [1u64, 1, 2];
        let t = build_huffman(&freqs).unwrap();
        assert_eq!(t.depth(2), 1);
        assert_eq!(t.depth(0), 2);
        assert_eq!(t.depth(1), 2);
        assert_eq!(
            t.weighted_path_length(&freqs),
            optimal_weighted_path_length(&freqs)
        );
    }

    #[test]
    fn inner_node_count() {
        let freqs: Vec<u64> = (1..=17).collect();
        let t = build_huffman(&freqs).unwrap();
        assert_eq!(t.inner_count, freqs.len() - 1);
        let max_inner = t.paths.iter().flatten().max().copied().unwrap();
        assert_eq!(max_inner as usize, t.inner_count - 1);
    }

    #[test]
    fn paths_are_prefix_free() {
        let freqs = [5u64, 3, 3, 2, 1, 1];
        let t = build_huffman(&freqs).unwrap();
        // encode each leaf as (node, sign) steps; no code may prefix another
        let codes: Vec<Vec<(u32, i8)>> = (0..freqs.len())
            .map(|i| {
                t.paths[i]
                    .iter()
                    .zip(&t.signs[i])
                    .map(|(n, s)| (*n, *s as i8))
                    .collect()
            })
            .collect();
        for i in 0..codes.len() {
            for j in 0..codes.len() {
                if i != j {
                    assert!(!codes[j].starts_with(&codes[i]), "leaf {i} prefixes {j}");
                }
            }
        }
    }

    #[test]
    fn kraft_inequality() {
        let freqs = [7u64, 5, 4, 4, 3, 2, 1, 1, 1];
        let t = build_huffman(&freqs).unwrap();
        let kraft: f64 = (0..freqs.len()).map(|i| 0.5f64.powi(t.depth(i as u32) as i32)).sum();
        assert!((kraft - 1.0).abs() < 1e-12, "full binary tree saturates Kraft");
    }

    #[test]
    fn optimal_for_small_multisets() {
        let cases: Vec<Vec<u64>> = vec![
            vec![1, 1, 1, 1],
            vec![1, 2, 3, 4, 5],
            vec![5, 5, 5, 1],
            vec![2, 2, 2, 2, 2, 2],
        ];
        for freqs in cases {
            let t = build_huffman(&freqs).unwrap();
            assert_eq!(
                t.weighted_path_length(&freqs),
                optimal_weighted_path_length(&freqs),
                "freqs {freqs:?}"
            );
        }
    }

    proptest::proptest! {
        #[test]
        fn full_binary_tree_for_random_frequencies(
            freqs in proptest::collection::vec(1..200u64, 2..40)
        ) {
            let t = build_huffman(&freqs).unwrap();
            let kraft: f64 = (0..freqs.len())
                .map(|i| 0.5f64.powi(t.depth(i as u32) as i32))
                .sum();
            proptest::prop_assert!((kraft - 1.0).abs() < 1e-9);
            proptest::prop_assert_eq!(t.inner_count, freqs.len() - 1);
        }
    }

    #[test]
    fn too_few_terms_errors() {
        assert!(build_huffman(&[]).is_err());
        assert!(build_huffman(&[3]).is_err());
    }

    #[test]
    fn deterministic_under_ties() {
        let freqs = [2u64, 2, 2, 2, 2];
        let a = build_huffman(&freqs).unwrap();
        let b = build_huffman(&freqs).unwrap();
        assert_eq!(a, b);
    }
}
