use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Fixed-length allele vector. Immutable once created; clones share storage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genome(Arc<[u32]>);

impl Genome {
    pub fn new(alleles: Vec<u32>) -> Self {
        Genome(alleles.into())
    }

    /// Genome whose every position carries `allele`.
    pub fn uniform(allele: u32, len: usize) -> Self {
        Genome(vec![allele; len].into())
    }

    pub fn alleles(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most frequent allele (lowest value on ties). Used as the family label
    /// for display and asexual bookkeeping.
    pub fn dominant_allele(&self) -> u32 {
        if self.0.len() == 1 {
            return self.0[0];
        }
        let mut sorted: Vec<u32> = self.0.to_vec();
        sorted.sort_unstable();
        let mut best = (sorted[0], 0usize);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            if j - i > best.1 {
                best = (sorted[i], j - i);
            }
            i = j;
        }
        best.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_allele_prefers_lowest_on_tie() {
        assert_eq!(Genome::new(vec![3, 1, 3, 1]).dominant_allele(), 1);
        assert_eq!(Genome::new(vec![2, 2, 5]).dominant_allele(), 2);
        assert_eq!(Genome::uniform(4, 32).dominant_allele(), 4);
    }
}
