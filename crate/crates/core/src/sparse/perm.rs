//! Row/column permutations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A permutation of `0..n` together with its inverse.
///
/// `forward[new] = old` maps positions in the permuted ordering back to the
/// original indices; `inverse` is the inverse map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    /// Builds a permutation from its forward map, validating bijectivity.
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in forward.iter().enumerate() {
            if old >= n {
                return Err(Error::InvalidParameter(format!(
                    "permutation entry {old} out of range for length {n}"
                )));
            }
            if inverse[old] != usize::MAX {
                return Err(Error::InvalidParameter(format!(
                    "permutation maps index {old} twice"
                )));
            }
            inverse[old] = new;
        }
        Ok(Self { forward, inverse })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// Original index stored at permuted position `new`.
    pub fn old_index(&self, new: usize) -> usize {
        self.forward[new]
    }

    /// Permuted position of original index `old`.
    pub fn new_index(&self, old: usize) -> usize {
        self.inverse[old]
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// Reorders a slice so that `out[new] = v[forward[new]]`.
    pub fn apply<T: Copy>(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.forward.len());
        self.forward.iter().map(|&old| v[old]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let p = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        for old in 0..4 {
            assert_eq!(p.old_index(p.new_index(old)), old);
        }
        for new in 0..4 {
            assert_eq!(p.new_index(p.old_index(new)), new);
        }
    }

    #[test]
    fn rejects_non_bijective() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3]).is_err());
    }

    #[test]
    fn applies_to_slices() {
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(p.apply(&[10, 11, 12]), vec![12, 10, 11]);
    }
}
