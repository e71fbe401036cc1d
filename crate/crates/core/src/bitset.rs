use std::fmt;

/// Fixed-length packed bitset. Bit `i` lives in word `i / 64`, bit `i % 64`;
/// the little-endian byte image therefore places bit `i` at byte `i / 8`,
/// bit `i % 8`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitSet {
    len: usize,
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        BitSet {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut b = BitSet::new(len);
        for i in indices {
            b.insert(i);
        }
        b
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Popcount of `self & other`.
    pub fn intersection_count(&self, other: &BitSet) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + bit)
            })
        })
    }

    pub fn byte_len(len: usize) -> usize {
        len.div_ceil(8)
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        let nbytes = Self::byte_len(self.len);
        let start = out.len();
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(start + nbytes);
    }

    /// Inverse of [`write_bytes`](Self::write_bytes). Padding bits past `len`
    /// must be zero.
    pub fn from_bytes(len: usize, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::byte_len(len) {
            return None;
        }
        let mut words = vec![0u64; len.div_ceil(64)];
        for (i, &byte) in bytes.iter().enumerate() {
            words[i / 8] |= (byte as u64) << (8 * (i % 8));
        }
        if len % 64 != 0 {
            if let Some(last) = words.last() {
                if last >> (len % 64) != 0 {
                    return None;
                }
            }
        }
        Some(BitSet { len, words })
    }
}

impl fmt::Debug for BitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitSet[{}]{{", self.len)?;
        for i in 0..self.len {
            f.write_str(if self.contains(i) { "1" } else { "0" })?;
        }
        f.write_str("}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout_is_lsb_first() {
        let b = BitSet::from_indices(11, [0, 3, 8, 10]);
        let mut out = Vec::new();
        b.write_bytes(&mut out);
        assert_eq!(out, vec![0b0000_1001, 0b0000_0101]);
    }

    #[test]
    fn nonzero_padding_rejected() {
        assert!(BitSet::from_bytes(3, &[0b1000_0000]).is_none());
        assert!(BitSet::from_bytes(3, &[0b0000_0111]).is_some());
        assert!(BitSet::from_bytes(9, &[0]).is_none());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
            let b = BitSet::from_indices(bits.len(), bits.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i));
            let mut out = Vec::new();
            b.write_bytes(&mut out);
            prop_assert_eq!(out.len(), BitSet::byte_len(bits.len()));
            let back = BitSet::from_bytes(bits.len(), &out).unwrap();
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(back.count_ones(), bits.iter().filter(|&&v| v).count());
            prop_assert_eq!(back.iter_ones().collect::<Vec<_>>(),
                bits.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect::<Vec<_>>());
        }
    }
}
