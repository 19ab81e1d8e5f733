//! Binary Merkle root over an ordered list of byte strings.
//!
//! Leaves hash as SHA-256(0x00 ‖ leaf) and interior nodes as
//! SHA-256(0x01 ‖ left ‖ right). A level with an odd node count pairs the
//! last node with itself, including the single-leaf case. The empty list has
//! the all-zero root.

use crate::crypto::{sha256_concat, Hash};

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

pub fn leaf_hash(leaf: &[u8]) -> Hash {
    sha256_concat(&[&[LEAF_TAG], leaf])
}

pub fn node_hash(left: &Hash, right: &Hash) -> Hash {
    sha256_concat(&[&[NODE_TAG], left.as_bytes(), right.as_bytes()])
}

pub fn merkle_root<T: AsRef<[u8]>>(leaves: &[T]) -> Hash {
    if leaves.is_empty() {
        return Hash::ZERO;
    }
    let mut level: Vec<Hash> = leaves.iter().map(|l| leaf_hash(l.as_ref())).collect();
    loop {
        level = level
            .chunks(2)
            .map(|pair| node_hash(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
        if level.len() == 1 {
            return level[0];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_is_zero() {
        assert_eq!(merkle_root::<Vec<u8>>(&[]), Hash::ZERO);
    }

    #[test]
    fn single_leaf_is_paired_with_itself() {
        let h = leaf_hash(b"x");
        assert_eq!(merkle_root(&[b"x"]), node_hash(&h, &h));
        // Frozen from an independent Python hashlib computation.
        assert_eq!(
            merkle_root(&[b"x"]).to_string(),
            "8c3cf1820778231037cf140d3c07c1c10278f0ac02bece3534b96f9aacf37a41"
        );
    }

    #[test]
    fn three_leaves_match_straight_line_recomputation() {
        let leaves: [&[u8]; 3] = [b"a", b"b", b"c"];
        let (a, b, c) = (leaf_hash(b"a"), leaf_hash(b"b"), leaf_hash(b"c"));
        let expected = node_hash(&node_hash(&a, &b), &node_hash(&c, &c));
        assert_eq!(merkle_root(&leaves), expected);
        assert_eq!(
            expected.to_string(),
            "e9636069c740c9ff51625b01a0b040396d265a9b920cc6febdfa5ecc9f58ecce"
        );
    }

    #[test]
    fn any_change_or_swap_changes_the_root() {
        for n in 1..=8usize {
            let leaves: Vec<Vec<u8>> = (0..n).map(|i| vec![i as u8; 3]).collect();
            let root = merkle_root(&leaves);
            for i in 0..n {
                let mut changed = leaves.clone();
                changed[i][0] ^= 0x80;
                assert_ne!(merkle_root(&changed), root, "n={n} change at {i}");
                for j in (i + 1)..n {
                    let mut swapped = leaves.clone();
                    swapped.swap(i, j);
                    assert_ne!(merkle_root(&swapped), root, "n={n} swap {i},{j}");
                }
            }
        }
    }
}
