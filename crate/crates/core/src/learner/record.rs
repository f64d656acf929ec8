//! Flat binary parameter record: a little-endian `u32` array count, then
//! for each array a `u64` element count followed by that many
//! little-endian `f64` values. Used for model downloads and memory dumps.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FlatRecord {
    pub arrays: Vec<Vec<f64>>,
}

impl FlatRecord {
    pub fn new(arrays: Vec<Vec<f64>>) -> Self {
        Self { arrays }
    }

    pub fn encoded_len(&self) -> usize {
        4 + self.arrays.iter().map(|a| 8 + 8 * a.len()).sum::<usize>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for array in &self.arrays {
            out.extend_from_slice(&(array.len() as u64).to_le_bytes());
            for v in array {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let count = u32::from_le_bytes(take::<4>(&mut cursor)?) as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = u64::from_le_bytes(take::<8>(&mut cursor)?) as usize;
            if cursor.len() / 8 < len {
                return Err(Error::Decode(format!("array of {len} values overruns record")));
            }
            let values = (0..len)
                .map(|_| take::<8>(&mut cursor).map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            arrays.push(values);
        }
        if !cursor.is_empty() {
            return Err(Error::Decode(format!("{} trailing bytes", cursor.len())));
        }
        Ok(Self { arrays })
    }
}

fn take<const N: usize>(cursor: &mut &[u8]) -> Result<[u8; N]> {
    if cursor.len() < N {
        return Err(Error::Decode("record truncated".into()));
    }
    let (head, rest) = cursor.split_at(N);
    *cursor = rest;
    Ok(head.try_into().expect("length checked"))
}
