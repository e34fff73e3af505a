use crate::error::{Error, Result};

/// Block boundaries `b0 = 0 < b1 < ... < bk = limit`. Block `i` (1-based)
/// covers starts `b(i-1)+1 ..= b(i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    boundaries: Vec<u64>,
}

impl BlockSpec {
    pub fn boundaries(&self) -> &[u64] {
        &self.boundaries
    }

    pub fn limit(&self) -> u64 {
        *self.boundaries.last().expect("at least two boundaries")
    }

    pub fn block_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Starts covered by 1-based block `i`.
    pub fn block(&self, i: usize) -> Option<std::ops::RangeInclusive<u64>> {
        if i == 0 || i >= self.boundaries.len() {
            return None;
        }
        Some(self.boundaries[i - 1] + 1..=self.boundaries[i])
    }
}

/// Splits `1..=limit` into blocks of `block_size`, the last one clamped.
pub fn make_blocks(limit: u64, block_size: u64) -> Result<BlockSpec> {
    if limit == 0 || block_size == 0 {
        return Err(Error::Config("limit and block size must be at least 1".into()));
    }
    let mut boundaries: Vec<u64> = (0..limit).step_by(block_size as usize).collect();
    boundaries.push(limit);
    Ok(BlockSpec { boundaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(make_blocks(40, 10).unwrap().boundaries(), &[0, 10, 20, 30, 40]);
        assert_eq!(make_blocks(10, 10).unwrap().boundaries(), &[0, 10]);
        assert_eq!(make_blocks(25, 10).unwrap().boundaries(), &[0, 10, 20, 25]);
        assert_eq!(make_blocks(1, 1000).unwrap().boundaries(), &[0, 1]);
        assert!(make_blocks(0, 10).is_err());
        assert!(make_blocks(10, 0).is_err());
    }

    #[test]
    fn block_ranges() {
        let b = make_blocks(25, 10).unwrap();
        assert_eq!(b.block_count(), 3);
        assert_eq!(b.block(1), Some(1..=10));
        assert_eq!(b.block(3), Some(21..=25));
        assert_eq!(b.block(0), None);
        assert_eq!(b.block(4), None);
    }
}
